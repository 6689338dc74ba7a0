"""Streaming corpus cleaning: normalize, tokenize, lowercase, filter, dedup."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import unicodedata
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .moses import moses_tokenize

logger = logging.getLogger(__name__)

PATTERN_CLASSES = ("email", "phone_fax", "url")
UNICODE_FORMS = ("NFC", "NFKC")

_PATTERNS = {
    "email": re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+", re.IGNORECASE),
    "phone_fax": re.compile(
        r"(?<!\d)(?:(?:\+|00)\d{2,3}[\s.-]?\(?0?\)?|0)[1-9](?:[\s.-]?\d{2}){4}(?!\d)"
        r"|\b(?:t[ée]l(?:[ée]phone)?|fax|t[ée]l[ée]copie)\s*[.:]?\s*[+\d(]",
        re.IGNORECASE,
    ),
    "url": re.compile(r"\b(?:https?|ftp)://\S+|\bwww\.[\w-]+\.\S+", re.IGNORECASE),
}


class DecodingError(ValueError):
    """Raised for input bytes that are not valid UTF-8."""

    def __init__(self, offset: int, reason: str = "invalid utf-8"):
        super().__init__(f"{reason} at byte offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class CleaningConfig:
    min_tokens: int = 4
    max_tokens: int = 1024
    max_nonalpha_ratio: float = 0.5
    max_digit_ratio: float = 0.3
    drop_patterns: tuple[str, ...] = PATTERN_CLASSES
    dedup_window: int = 1_000_000
    lowercase: bool = True
    unicode_form: str = "NFC"

    def __post_init__(self):
        object.__setattr__(self, "drop_patterns", tuple(self.drop_patterns))
        if not 0 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 0 <= min_tokens <= max_tokens")
        for name in ("max_nonalpha_ratio", "max_digit_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        unknown = set(self.drop_patterns) - set(PATTERN_CLASSES)
        if unknown:
            raise ValueError(f"unknown drop pattern classes: {sorted(unknown)}")
        if self.unicode_form not in UNICODE_FORMS:
            raise ValueError(f"unicode_form must be one of {UNICODE_FORMS}")
        if self.dedup_window < 0:
            raise ValueError("dedup_window must be >= 0")


@dataclass(frozen=True)
class CleanSentence:
    tokens: tuple[str, ...]
    source_id: str = ""
    line_no: int = 0

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class DropDecision:
    reason: str


@dataclass
class CorpusStats:
    lines_in: int = 0
    lines_kept: int = 0
    tokens_kept: int = 0
    drop_reasons: Counter = field(default_factory=Counter)
    shard_errors: dict[str, str] = field(default_factory=dict)

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(
            self.lines_in + other.lines_in,
            self.lines_kept + other.lines_kept,
            self.tokens_kept + other.tokens_kept,
            self.drop_reasons + other.drop_reasons,
            {**self.shard_errors, **other.shard_errors},
        )

    def record(self, outcome: "CleanSentence | DropDecision") -> None:
        self.lines_in += 1
        if isinstance(outcome, DropDecision):
            self.drop_reasons[outcome.reason] += 1
        else:
            self.lines_kept += 1
            self.tokens_kept += len(outcome.tokens)

    def to_dict(self) -> dict:
        d = {
            "lines_in": self.lines_in,
            "lines_kept": self.lines_kept,
            "tokens_kept": self.tokens_kept,
            "drop_reasons": dict(sorted(self.drop_reasons.items())),
        }
        if self.shard_errors:
            d["shard_errors"] = dict(self.shard_errors)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def unicode_normalize(text: str | bytes, form: str = "NFC") -> str:
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodingError(e.start, e.reason) from None
    return unicodedata.normalize(form, text)


class DedupWindow:
    """Remembers the hashes of the last ``size`` kept lines."""

    def __init__(self, size: int):
        self.size = size
        self._order: deque[bytes] = deque()
        self._seen: set[bytes] = set()

    def seen_before(self, text: str) -> bool:
        """Check ``text`` and remember it if new."""
        if self.size == 0:
            return False
        key = hashlib.blake2b(text.encode("utf-8"), digest_size=12).digest()
        if key in self._seen:
            return True
        self._order.append(key)
        self._seen.add(key)
        if len(self._order) > self.size:
            self._seen.discard(self._order.popleft())
        return False


def _char_ratios(tokens: Sequence[str]) -> tuple[float, float]:
    chars = "".join(tokens)
    if not chars:
        return 0.0, 0.0
    nonalpha = sum(1 for c in chars if not c.isalpha())
    digits = sum(1 for c in chars if c.isdigit())
    return nonalpha / len(chars), digits / len(chars)


def _filter(line: str | bytes, cfg: CleaningConfig) -> tuple[str, ...] | DropDecision:
    text = unicode_normalize(line, cfg.unicode_form)
    tokens = moses_tokenize(text)
    if cfg.lowercase:
        tokens = [unicodedata.normalize(cfg.unicode_form, t.lower()) for t in tokens]
    if len(tokens) < cfg.min_tokens:
        return DropDecision("too_short")
    if len(tokens) > cfg.max_tokens:
        return DropDecision("too_long")
    nonalpha, digits = _char_ratios(tokens)
    if nonalpha > cfg.max_nonalpha_ratio:
        return DropDecision("nonalpha_ratio")
    if digits > cfg.max_digit_ratio:
        return DropDecision("digit_ratio")
    # Patterns look at the untokenized text; tokenization splits "@" and "://".
    for name in PATTERN_CLASSES:
        if name in cfg.drop_patterns and _PATTERNS[name].search(text):
            return DropDecision(name)
    return tuple(tokens)


def clean_sentence(
    line: str | bytes,
    cfg: CleaningConfig,
    seen: DedupWindow | None = None,
    source_id: str = "",
    line_no: int = 0,
) -> CleanSentence | DropDecision:
    """Run one raw line through the full cleaning chain.

    Returns the first drop reason that fires, or the kept sentence.  The
    duplicate check only runs when a ``seen`` window is passed in.
    """
    result = _filter(line, cfg)
    if isinstance(result, DropDecision):
        return result
    sentence = CleanSentence(result, source_id, line_no)
    if seen is not None and seen.seen_before(sentence.text):
        return DropDecision("duplicate")
    return sentence


def render(sentence: CleanSentence) -> str:
    return sentence.text


def _clean_chunk(args) -> list:
    lines, cfg = args
    out = []
    for raw in lines:
        try:
            out.append(_filter(raw, cfg))
        except DecodingError:
            out.append(DropDecision("decode_error"))
    return out


def _read_chunks(path: Path, size: int) -> Iterator[list[bytes]]:
    with open(path, "rb") as f:
        lines = (raw.rstrip(b"\r\n") for raw in f)
        while True:
            chunk = list(islice(lines, size))
            if not chunk:
                return
            yield chunk


def _ordered_map(pool: ProcessPoolExecutor, chunks: Iterator, ahead: int) -> Iterator[list]:
    # Bounded look-ahead keeps memory flat on large shards.
    pending: deque = deque()
    for chunk in chunks:
        pending.append(pool.submit(_clean_chunk, chunk))
        if len(pending) >= ahead:
            yield pending.popleft().result()
    while pending:
        yield pending.popleft().result()


def iter_clean(
    shards: Iterable[str | Path],
    cfg: CleaningConfig,
    stats: CorpusStats,
    workers: int = 1,
    chunk_size: int = 2000,
) -> Iterator[CleanSentence]:
    """Yield kept sentences shard by shard, updating ``stats`` as it goes.

    Per-line cleaning is farmed out in chunks; deduplication happens here,
    in input order, so the output does not depend on ``workers``.
    """
    seen = DedupWindow(cfg.dedup_window)
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for shard in shards:
            path = Path(shard)
            shard_id = str(shard)
            line_no = 0
            try:
                chunks = ((c, cfg) for c in _read_chunks(path, chunk_size))
                results = _ordered_map(pool, chunks, workers * 4) if pool else map(_clean_chunk, chunks)
                for batch in results:
                    for res in batch:
                        line_no += 1
                        if isinstance(res, tuple):
                            sentence = CleanSentence(res, shard_id, line_no)
                            res = DropDecision("duplicate") if seen.seen_before(sentence.text) else sentence
                        stats.record(res)
                        if isinstance(res, CleanSentence):
                            yield res
            except OSError as e:
                logger.warning("shard %s unreadable: %s", shard_id, e)
                stats.shard_errors[shard_id] = f"{type(e).__name__}: {e}"
    finally:
        if pool is not None:
            pool.shutdown()


def filter_corpus(
    shards: Iterable[str | Path], cfg: CleaningConfig, workers: int = 1
) -> tuple[list[CleanSentence], CorpusStats]:
    stats = CorpusStats()
    kept = list(iter_clean(shards, cfg, stats, workers=workers))
    return kept, stats


def write_corpus(
    shards: Iterable[str | Path], cfg: CleaningConfig, out_path: str | Path, workers: int = 1
) -> CorpusStats:
    stats = CorpusStats()
    with open(out_path, "w", encoding="utf-8", newline="\n") as out:
        for sentence in iter_clean(shards, cfg, stats, workers=workers):
            out.write(sentence.text + "\n")
    return stats


def read_clean_corpus(path: str | Path) -> Iterator[list[str]]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            tokens = line.split()
            if tokens:
                yield tokens
