"""Fixed-length packing and dynamic sub-word masking for MLM batches."""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .bpe import BOS, EOS, MASK, NUM_SPECIALS, PAD

IGNORE = -1


@dataclass(frozen=True)
class MaskingConfig:
    p_select: float = 0.15
    p_mask: float = 0.8
    p_random: float = 0.1
    p_keep: float = 0.1
    max_len: int = 512
    seed: int = 0

    def __post_init__(self):
        for name in ("p_select", "p_mask", "p_random", "p_keep"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be a probability, got {value}")
        if abs(self.p_mask + self.p_random + self.p_keep - 1.0) > 1e-9:
            raise ValueError("p_mask + p_random + p_keep must equal 1")
        if self.max_len < 8:
            raise ValueError("max_len must be >= 8")


@dataclass
class MaskedBatch:
    inputs: np.ndarray  # [B, T] int64
    labels: np.ndarray  # [B, T] int64, IGNORE where not corrupted
    attention_mask: np.ndarray  # [B, T] bool
    positions: np.ndarray  # [B, T] int64

    @property
    def shape(self) -> tuple[int, int]:
        return self.inputs.shape

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("inputs", "labels", "attention_mask", "positions")}


def pack_sequences(encoded: Iterable, max_len: int) -> Iterator[list[int]]:
    """BOS + ids + EOS per sentence, truncated to ``max_len``."""
    if max_len < 8:
        raise ValueError("max_len must be >= 8")
    for seq in encoded:
        ids = list(getattr(seq, "ids", seq))
        yield [BOS] + ids[: max_len - 2] + [EOS]


def row_rng(seed: int, epoch: int, row: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, row])


def dynamic_mask(
    sequence: Sequence[int], cfg: MaskingConfig, rng: np.random.Generator, vocab_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt one sequence; returns (inputs, labels).

    Every non-special position is selected independently with
    ``p_select``; selected ones become MASK, a random non-special id, or
    stay unchanged.
    """
    ids = np.asarray(sequence, dtype=np.int64)
    maskable = ids >= NUM_SPECIALS
    if not maskable.any():
        raise ValueError("sequence has no maskable token")
    n = len(ids)
    selected = maskable & (rng.random(n) < cfg.p_select)
    action = rng.random(n)
    replacements = rng.integers(NUM_SPECIALS, vocab_size, size=n)
    inputs = ids.copy()
    to_mask = selected & (action < cfg.p_mask)
    to_random = selected & (action >= cfg.p_mask) & (action < cfg.p_mask + cfg.p_random)
    inputs[to_mask] = MASK
    inputs[to_random] = replacements[to_random]
    labels = np.where(selected, ids, IGNORE)
    return inputs, labels


def collate(rows: list[tuple[np.ndarray, np.ndarray]]) -> MaskedBatch:
    width = max(len(r[0]) for r in rows)
    b = len(rows)
    inputs = np.full((b, width), PAD, dtype=np.int64)
    labels = np.full((b, width), IGNORE, dtype=np.int64)
    attn = np.zeros((b, width), dtype=bool)
    for i, (x, y) in enumerate(rows):
        inputs[i, : len(x)] = x
        labels[i, : len(y)] = y
        attn[i, : len(x)] = True
    positions = np.broadcast_to(np.arange(width, dtype=np.int64), (b, width)).copy()
    return MaskedBatch(inputs, labels, attn, positions)


def make_batches(
    sequences: Sequence[Sequence[int]],
    batch_size: int,
    cfg: MaskingConfig,
    vocab_size: int,
    epoch: int = 0,
    row_offset: int = 0,
) -> Iterator[MaskedBatch]:
    """Mask and right-pad ``sequences`` in order, ``batch_size`` rows at a time.

    Row ``r`` is corrupted with a generator seeded by ``(seed, epoch,
    row_offset + r)``, so batches are reproducible and differ per epoch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    for start in range(0, len(sequences), batch_size):
        rows = []
        for r in range(start, min(start + batch_size, len(sequences))):
            rng = row_rng(cfg.seed, epoch, row_offset + r)
            rows.append(dynamic_mask(sequences[r], cfg, rng, vocab_size))
        yield collate(rows)


def prefetch(items: Iterable, depth: int = 4) -> Iterator:
    """Produce ``items`` on a background thread through a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()

    def worker():
        try:
            for item in items:
                q.put(item)
        except BaseException as e:  # surfaced on the consumer side
            q.put(e)
        q.put(done)

    threading.Thread(target=worker, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item
