"""Benchmark driver for the FLUE-style tasks.

Each task lives in its own directory under the data root:

* ``cls-books``, ``cls-dvd``, ``cls-music``: ``train.tsv``, ``test.tsv`` (``text<TAB>label``)
* ``pawsx``, ``xnli``: ``train.tsv``, ``dev.tsv``, ``test.tsv`` (``text_a<TAB>text_b<TAB>label``)
* ``wsd-verb``: ``inventory.tsv`` (counted as the train split) and ``test.tsv``
* ``wsd-noun``: ``train.tsv``, ``test.tsv``

Every file starts with a header line.  WSD files use
``tokens<TAB>target_index<TAB>lemma<TAB>sense_id``.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bpe import BpeVocab, MergeTable
from .checkpoint import file_hash, load_checkpoint
from .corpus import CleaningConfig, unicode_normalize
from .finetune import GridSearchConfig, HeadConfig, TaskExample, finetune_task
from .moses import moses_tokenize
from .wsd import (
    ContextEncoder,
    NounExample,
    SenseInventory,
    StackConfig,
    WsdInstance,
    disambiguate_verbs,
    evaluate_noun_models,
    f1_score,
    train_noun_classifier,
)

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed, missing or (under ``strict``) mis-sized task data."""


@dataclass(frozen=True)
class TaskDescriptor:
    name: str
    arity: int  # 1 single sentence, 2 sentence pair, 0 word-level WSD
    metric: str
    splits: tuple[tuple[str, int], ...]
    num_classes: int = 0
    head: str = ""
    val_policy: str = ""

    @property
    def expected_sizes(self) -> dict[str, int]:
        return dict(self.splits)

    def path(self, data_dir: str | Path, split: str) -> Path:
        name = "inventory" if self.name == "wsd-verb" and split == "train" else split
        return Path(data_dir) / self.name / f"{name}.tsv"


TASKS: dict[str, TaskDescriptor] = {
    d.name: d
    for d in (
        TaskDescriptor("cls-books", 1, "accuracy", (("train", 2000), ("test", 2000)), 2, "deep", "split20"),
        TaskDescriptor("cls-dvd", 1, "accuracy", (("train", 1999), ("test", 2000)), 2, "deep", "split20"),
        TaskDescriptor("cls-music", 1, "accuracy", (("train", 1998), ("test", 2000)), 2, "deep", "split20"),
        TaskDescriptor("pawsx", 2, "accuracy", (("train", 49401), ("dev", 1992), ("test", 1985)), 2, "deep", "dev_set"),
        TaskDescriptor("xnli", 2, "accuracy", (("train", 392702), ("dev", 2490), ("test", 5010)), 3, "shallow", "dev_set"),
        TaskDescriptor("wsd-verb", 0, "f1", (("train", 55206), ("test", 3199))),
        TaskDescriptor("wsd-noun", 0, "f1", (("train", 818262), ("test", 1445))),
    )
}

TASK_ALIASES = {"cls": ("cls-books", "cls-dvd", "cls-music")}


def resolve_tasks(names: Sequence[str]) -> list[TaskDescriptor]:
    out = []
    for name in names:
        for n in TASK_ALIASES.get(name, (name,)):
            if n not in TASKS:
                raise KeyError(f"unknown task {n!r}; known: {', '.join(TASKS)}")
            out.append(TASKS[n])
    return out


@dataclass
class TaskData:
    train: list = field(default_factory=list)
    dev: list = field(default_factory=list)
    test: list = field(default_factory=list)
    inventory: SenseInventory | None = None

    def sizes(self) -> dict[str, int]:
        sizes = {"train": len(self.train), "dev": len(self.dev), "test": len(self.test)}
        if self.inventory is not None:
            sizes["train"] = sum(len(s.examples) for senses in self.inventory.senses.values() for s in senses)
        return sizes


def prepare_text(text: str, cfg: CleaningConfig = CleaningConfig()) -> tuple[str, ...]:
    """Apply the pretraining normalization, tokenization and casing to raw task text."""
    tokens = moses_tokenize(unicode_normalize(text, cfg.unicode_form))
    return tuple(t.lower() for t in tokens) if cfg.lowercase else tuple(tokens)


def _rows(path: Path, n_fields: int):
    if not path.exists():
        raise DataError(f"{path}: missing")
    with open(path, encoding="utf-8") as f:
        if f.readline() == "":
            raise DataError(f"{path}: empty file (a header line is required)")
        for n, line in enumerate(f, 2):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != n_fields:
                raise DataError(f"{path}:{n}: expected {n_fields} tab-separated fields, got {len(cols)}")
            yield n, cols


def _label(path: Path, n: int, text: str, num_classes: int) -> int:
    try:
        y = int(text)
    except ValueError:
        raise DataError(f"{path}:{n}: label {text!r} is not an integer") from None
    if not 0 <= y < num_classes:
        raise DataError(f"{path}:{n}: label {y} outside [0, {num_classes})")
    return y


def _load_classification(desc: TaskDescriptor, path: Path, cfg: CleaningConfig) -> list[TaskExample]:
    out = []
    for n, cols in _rows(path, desc.arity + 1):
        y = _label(path, n, cols[-1], desc.num_classes)
        a = prepare_text(cols[0], cfg)
        b = prepare_text(cols[1], cfg) if desc.arity == 2 else None
        if not a or (desc.arity == 2 and not b):
            raise DataError(f"{path}:{n}: empty text field")
        out.append(TaskExample(a, b, y))
    return out


def load_wsd_instances(path: str | Path, lowercase: bool = True) -> list[WsdInstance]:
    path = Path(path)
    out = []
    for n, (sentence, target, lemma, sense) in _rows(path, 4):
        tokens = tuple(t.lower() for t in sentence.split()) if lowercase else tuple(sentence.split())
        try:
            out.append(WsdInstance(tokens, int(target), lemma, sense or None))
        except ValueError as exc:
            raise DataError(f"{path}:{n}: {exc}") from None
    return out


def load_inventory(path: str | Path, lowercase: bool = True) -> SenseInventory:
    path = Path(path)
    inv = SenseInventory()
    for n, (lemma, sense_id, gloss, example, target) in _rows(path, 5):
        tokens = [t.lower() for t in example.split()] if lowercase else example.split()
        try:
            idx = int(target)
        except ValueError:
            raise DataError(f"{path}:{n}: target index {target!r} is not an integer") from None
        if not 0 <= idx < len(tokens):
            raise DataError(f"{path}:{n}: target index {idx} outside a {len(tokens)}-token example")
        inv.add(lemma, sense_id, gloss, tokens, idx)
    return inv


def load_task(desc: TaskDescriptor, data_dir: str | Path, strict: bool = False,
              cleaning: CleaningConfig = CleaningConfig()) -> TaskData:
    """Parse a task's splits and check them against the full-scale sizes.

    Size mismatches are expected for desk-scale subsets and only warn,
    unless ``strict``.  When the sizes do match, CLS label balance is
    checked as well (each class 45-55%).
    """
    data = TaskData()
    splits = desc.expected_sizes
    if desc.name == "wsd-verb":
        data.inventory = load_inventory(desc.path(data_dir, "train"), cleaning.lowercase)
        data.test = load_wsd_instances(desc.path(data_dir, "test"), cleaning.lowercase)
        for inst in data.test:
            if inst.lemma not in data.inventory:
                raise DataError(f"{desc.path(data_dir, 'test')}: lemma {inst.lemma!r} missing from the inventory")
    elif desc.name == "wsd-noun":
        data.train = load_wsd_instances(desc.path(data_dir, "train"), cleaning.lowercase)
        data.test = load_wsd_instances(desc.path(data_dir, "test"), cleaning.lowercase)
    else:
        for split in splits:
            setattr(data, split, _load_classification(desc, desc.path(data_dir, split), cleaning))

    sizes = data.sizes()
    mismatched = {s: (sizes[s], n) for s, n in splits.items() if sizes[s] != n}
    if mismatched:
        detail = ", ".join(f"{s} {got} (expected {want})" for s, (got, want) in mismatched.items())
        if strict:
            raise DataError(f"{desc.name}: split sizes differ from the full-scale dataset: {detail}")
        logger.warning("%s: desk-scale subset: %s", desc.name, detail)
    elif desc.name.startswith("cls-"):
        for split in splits:
            rows = getattr(data, split)
            share = sum(ex.label for ex in rows) / len(rows)
            if not 0.45 <= share <= 0.55:
                raise DataError(f"{desc.name} {split}: positive share {share:.3f} outside [0.45, 0.55]")
    return data


# ---------------------------------------------------------------- reports


@dataclass
class RunReport:
    task: str
    checkpoint_hash: str
    seed: int
    metric: str
    value: float
    wall_time: float
    config: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value {self.value} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps({"status": "ok", **asdict(self)}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunReport":
        d = json.loads(line)
        d.pop("status", None)
        return cls(**d)


@dataclass
class TaskFailure:
    task: str
    seed: int
    error: str
    kind: str = "data"  # data | numeric | other

    def to_json(self) -> str:
        return json.dumps({"status": "failed", **asdict(self)}, sort_keys=True)


@dataclass
class BenchmarkResult:
    reports: list[RunReport] = field(default_factory=list)
    failures: list[TaskFailure] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in [*self.reports, *self.failures])


def read_reports(text: str) -> BenchmarkResult:
    out = BenchmarkResult()
    for line in text.splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if d.get("status") == "failed":
            d.pop("status")
            out.failures.append(TaskFailure(**d))
        else:
            out.reports.append(RunReport.from_json(line))
    return out


# ---------------------------------------------------------------- running


@dataclass(frozen=True)
class BenchmarkConfig:
    grid: GridSearchConfig = GridSearchConfig()
    cleaning: CleaningConfig = CleaningConfig()
    strict: bool = False
    noun_models: int = 4
    noun_epochs: int = 20
    noun_lr: float = 1e-3
    pooling: str = "mean"


def load_encoder_bundle(ckpt: str | Path):
    """Checkpoint plus the ``merges.txt``/``vocab.txt`` stored beside it."""
    ckpt = Path(ckpt)
    params, header = load_checkpoint(ckpt)
    table = MergeTable.load(ckpt.parent / "merges.txt")
    vocab = BpeVocab.load(ckpt.parent / "vocab.txt")
    if header.get("vocab_hash") and header["vocab_hash"] != vocab.hash():
        raise DataError(f"{ckpt}: vocabulary beside the checkpoint does not match its vocab hash")
    if len(vocab) != params.cfg.vocab_size:
        raise DataError(f"{ckpt}: vocabulary size {len(vocab)} != model vocab_size {params.cfg.vocab_size}")
    return params.astype(np.float64), header, vocab, table


def _noun_examples(encoder: ContextEncoder, instances: Sequence[WsdInstance], synsets: dict[str, int]):
    """Group annotations by sentence; senses missing from ``synsets`` are dropped."""
    cache: dict[tuple[str, ...], np.ndarray] = {}
    grouped: dict[tuple[str, ...], dict[int, int]] = {}
    for inst in instances:
        if inst.sense_id in synsets:
            grouped.setdefault(inst.tokens, {})[inst.target_index] = synsets[inst.sense_id]
    out = []
    for tokens, targets in grouped.items():
        if tokens not in cache:
            cache[tokens] = encoder.word_vectors(tokens)
        labels = np.full(len(tokens), -1, dtype=np.int64)
        for i, y in targets.items():
            labels[i] = y
        out.append(NounExample(cache[tokens], labels))
    return out


def run_task(desc: TaskDescriptor, ckpt: str | Path, data_dir: str | Path, seed: int,
             cfg: BenchmarkConfig = BenchmarkConfig()) -> RunReport:
    start = time.perf_counter()
    data = load_task(desc, data_dir, cfg.strict, cfg.cleaning)
    params, header, vocab, table = load_encoder_bundle(ckpt)
    snapshot: dict = {"model": params.cfg.to_dict()}
    details: dict = {}
    if desc.metric == "accuracy":
        head = HeadConfig(desc.head, desc.num_classes)
        grid = GridSearchConfig(**{**asdict(cfg.grid), "val_policy": desc.val_policy})
        res = finetune_task(params, data.train, data.test, head, grid, seed, vocab, table,
                            dev=data.dev or None, checkpoint_vocab_hash=header.get("vocab_hash") or None)
        value = res.test_accuracy
        snapshot.update(head=asdict(head), grid=asdict(grid))
        details = {"best_lr": res.best_lr, "val_accuracy": {repr(r.lr): r.val_accuracy for r in res.runs}}
    elif desc.name == "wsd-verb":
        encoder = ContextEncoder(params, vocab, table, pooling=cfg.pooling)
        preds = disambiguate_verbs(encoder, data.inventory, data.test)
        value = f1_score(preds, [inst.sense_id for inst in data.test])
        snapshot.update(pooling=cfg.pooling)
    else:
        encoder = ContextEncoder(params, vocab, table, pooling=cfg.pooling)
        synsets = sorted({inst.sense_id for inst in data.train})
        index = {s: i for i, s in enumerate(synsets)}
        train = _noun_examples(encoder, data.train, index)
        # test senses never seen in training get index len(synsets): scored, never predicted
        unseen = {inst.sense_id: len(synsets) for inst in data.test if inst.sense_id not in index}
        test = _noun_examples(encoder, data.test, {**index, **unseen})
        stack = StackConfig() if params.cfg.H >= 768 else StackConfig.toy(params.cfg.H)
        models = [
            train_noun_classifier(train, synsets, stack, seed * 100 + i, cfg.noun_epochs, lr=cfg.noun_lr)
            for i in range(cfg.noun_models)
        ]
        report = evaluate_noun_models(models, test)
        value = report.ensemble
        snapshot.update(stack=asdict(stack), epochs=cfg.noun_epochs, lr=cfg.noun_lr, pooling=cfg.pooling)
        details = {"f1_each": report.f1_each, "mean": report.mean, "std": report.std, "ensemble": report.ensemble,
                   "synsets": len(synsets), "test_sentences": len(test)}
    return RunReport(desc.name, file_hash(ckpt), seed, desc.metric, float(value),
                     time.perf_counter() - start, snapshot, details)


def _run_one(args) -> RunReport | TaskFailure:
    desc, ckpt, data_dir, seed, cfg = args
    try:
        return run_task(desc, ckpt, data_dir, seed, cfg)
    except (DataError, FileNotFoundError, KeyError) as exc:
        logger.error("%s (seed %d) failed: %s", desc.name, seed, exc)
        return TaskFailure(desc.name, seed, f"{type(exc).__name__}: {exc}", "data")
    except (FloatingPointError, ArithmeticError) as exc:
        return TaskFailure(desc.name, seed, f"{type(exc).__name__}: {exc}", "numeric")
    except Exception as exc:  # isolate any task failure from the others
        logger.exception("%s (seed %d) failed", desc.name, seed)
        kind = "numeric" if type(exc).__name__ == "NumericalError" else "other"
        return TaskFailure(desc.name, seed, f"{type(exc).__name__}: {exc}", kind)


def run_benchmark(ckpt: str | Path, tasks: Sequence[str], seeds: Sequence[int], data_dir: str | Path,
                  cfg: BenchmarkConfig = BenchmarkConfig(), parallel: bool = False) -> BenchmarkResult:
    """Run every (task, seed) pair; failures are recorded, not raised."""
    jobs = [(desc, str(ckpt), str(data_dir), seed, cfg) for desc in resolve_tasks(tasks) for seed in seeds]
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor(min(len(jobs), 8)) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(job) for job in jobs]
    result = BenchmarkResult()
    for o in outcomes:
        (result.reports if isinstance(o, RunReport) else result.failures).append(o)
    return result
