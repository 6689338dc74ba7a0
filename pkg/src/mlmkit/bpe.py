"""Byte-pair-encoding: merge learning, greedy application, id encoding.

Symbols are strings; the last symbol of every word carries the ``</w>``
suffix.  Pair frequencies are weighted by word frequency and counted
without overlap inside a word (``a a a`` holds one ``(a, a)``), which is
exactly what a left-to-right merge can consume.  Among pairs of equal
frequency the lexicographically smallest ``(left, right)`` wins.
"""

from __future__ import annotations

import hashlib
import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

EOW = "</w>"
PAD, UNK, BOS, EOS, MASK = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>", "<mask>")
NUM_SPECIALS = len(SPECIALS)


def word_to_symbols(word: str) -> list[str]:
    if not word:
        raise ValueError("cannot segment an empty word")
    return list(word[:-1]) + [word[-1] + EOW]


def count_pairs(symbols: Sequence[str]) -> Counter:
    """Non-overlapping adjacent pair counts of one symbol sequence."""
    counts: Counter = Counter()
    last_used: dict[tuple[str, str], int] = {}
    for i in range(len(symbols) - 1):
        pair = (symbols[i], symbols[i + 1])
        if last_used.get(pair, -1) >= i:
            continue
        counts[pair] += 1
        last_used[pair] = i + 1
    return counts


def merge_pair(symbols: Sequence[str], pair: tuple[str, str]) -> list[str]:
    left, right = pair
    out: list[str] = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


@dataclass
class MergeTable:
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        if len(self.ranks) != len(self.merges):
            raise ValueError("duplicate pair in merge table")
        self._apply = lru_cache(maxsize=1 << 16)(self._segment)

    def __len__(self) -> int:
        return len(self.merges)

    def __eq__(self, other) -> bool:
        return isinstance(other, MergeTable) and self.merges == other.merges

    def _segment(self, word: str) -> tuple[str, ...]:
        symbols = word_to_symbols(word)
        while len(symbols) > 1:
            best = None
            for i in range(len(symbols) - 1):
                rank = self.ranks.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best is None or rank < best):
                    best = rank
            if best is None:
                break
            symbols = merge_pair(symbols, self.merges[best])
        return tuple(symbols)

    def to_text(self) -> str:
        return "".join(f"{a} {b}\n" for a, b in self.merges)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "MergeTable":
        merges = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split(" ")
            if len(parts) != 2 or not all(parts):
                raise ValueError(f"{path}:{n}: expected 'left right', got {line!r}")
            merges.append((parts[0], parts[1]))
        return cls(merges)


def apply_bpe(word: str, table: MergeTable) -> list[str]:
    """Segment ``word`` by repeatedly applying its lowest-rank merge."""
    return list(table._apply(word))


@dataclass
class BpeVocab:
    """Sub-word vocabulary; ids 0-4 are the special symbols."""

    symbols: list[str]
    counts: list[int]
    eow_marker: str = EOW

    def __post_init__(self):
        if tuple(self.symbols[:NUM_SPECIALS]) != SPECIALS:
            raise ValueError("vocabulary must start with the special symbols")
        self.id_of = {s: i for i, s in enumerate(self.symbols)}
        if len(self.id_of) != len(self.symbols):
            raise ValueError("duplicate symbol in vocabulary")

    def __len__(self) -> int:
        return len(self.symbols)

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "BpeVocab":
        ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(list(SPECIALS) + [s for s, _ in ordered], [0] * NUM_SPECIALS + [c for _, c in ordered])

    def to_text(self) -> str:
        rows = zip(self.symbols[NUM_SPECIALS:], self.counts[NUM_SPECIALS:])
        return "".join(f"{s} {c}\n" for s, c in rows)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "BpeVocab":
        counts = {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = line.split(" ")
            if len(parts) != 2 or not parts[1].isdigit():
                raise ValueError(f"{path}:{n}: expected 'symbol count', got {line!r}")
            counts[parts[0]] = int(parts[1])
        return cls.from_counts(counts)


def word_counts(corpus: Iterable) -> Counter:
    counts: Counter = Counter()
    for sentence in corpus:
        tokens = getattr(sentence, "tokens", sentence)
        counts.update(tokens)
    return counts


def learn_merges(words: dict[str, int], num_merges: int) -> list[tuple[str, str]]:
    """Greedy merge learning over a word-frequency table.

    Pair counts are maintained incrementally: only words containing the
    chosen pair are re-counted, and a lazy max-heap holds candidates.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    items = sorted(words.items())
    segs = [word_to_symbols(w) for w, _ in items]
    freqs = [f for _, f in items]

    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, symbols in enumerate(segs):
        for pair, n in count_pairs(symbols).items():
            pair_counts[pair] += n * freqs[idx]
            where[pair].add(idx)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges and heap:
        neg, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg:
            continue  # stale entry
        if -neg < 2:
            break
        merges.append(pair)
        touched = set()
        for idx in where.pop(pair, ()):
            old = count_pairs(segs[idx])
            if pair not in old:
                continue
            new_symbols = merge_pair(segs[idx], pair)
            new = count_pairs(new_symbols)
            f = freqs[idx]
            for p, n in old.items():
                pair_counts[p] -= n * f
                touched.add(p)
            for p, n in new.items():
                pair_counts[p] += n * f
                where[p].add(idx)
                touched.add(p)
            segs[idx] = new_symbols
        for p in touched:
            c = pair_counts[p]
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                del pair_counts[p]
    return merges


def build_vocab(words: dict[str, int], table: MergeTable) -> BpeVocab:
    """Count final-segmentation symbols; every character and merge gets an id."""
    counts: Counter = Counter()
    for word in words:
        for ch in word:
            counts[ch] += 0
            counts[ch + EOW] += 0
    for left, right in table.merges:
        counts[left + right] += 0
    for word, freq in words.items():
        for sym in apply_bpe(word, table):
            counts[sym] += freq
    for s in SPECIALS:
        counts.pop(s, None)
    return BpeVocab.from_counts(counts)


def learn_bpe(corpus: Iterable, num_merges: int) -> tuple[MergeTable, BpeVocab]:
    words = word_counts(corpus)
    if not words:
        raise ValueError("cannot learn BPE from an empty corpus")
    table = MergeTable(learn_merges(words, num_merges))
    return table, build_vocab(words, table)


@dataclass(frozen=True)
class EncodedSequence:
    ids: tuple[int, ...]
    word_boundaries: tuple[tuple[int, int], ...]


def encode_sequence(tokens: Iterable[str] | object, vocab: BpeVocab, table: MergeTable) -> EncodedSequence:
    tokens = getattr(tokens, "tokens", tokens)
    ids: list[int] = []
    spans = []
    for word in tokens:
        start = len(ids)
        ids.extend(vocab.id_of.get(s, UNK) for s in apply_bpe(word, table))
        spans.append((start, len(ids)))
    return EncodedSequence(tuple(ids), tuple(spans))


def decode(ids: Iterable[int], vocab: BpeVocab) -> list[str]:
    words: list[str] = []
    parts: list[str] = []
    eow = vocab.eow_marker
    for i in ids:
        if i in (PAD, BOS, EOS):
            continue
        sym = vocab.symbols[i]
        if sym.endswith(eow) and i >= NUM_SPECIALS:
            parts.append(sym[: -len(eow)])
            words.append("".join(parts))
            parts = []
        else:
            parts.append(sym)
    if parts:
        words.append("".join(parts))
    return words
