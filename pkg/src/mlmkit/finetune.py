"""Sentence and sentence-pair classification on top of the pretrained encoder.

Two heads are available.  ``deep`` is dropout -> linear(H, H) -> tanh ->
dropout -> linear(H, C) and serves single-sentence and paraphrase tasks;
``shallow`` is dropout -> linear(H, C) and serves NLI.  The pooled
representation is the final hidden state at the BOS position, and the
whole network (encoder + head) is trained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bpe import BOS, EOS, PAD, BpeVocab, MergeTable, encode_sequence
from .pretrain import AdamConfig, AdamState, adam_step
from .transformer import DropoutSource, Parameters, encoder_backward, encoder_forward, mlm_loss

logger = logging.getLogger(__name__)

ENCODER_ONLY = ("mlm_bias", "mlm_proj")


@dataclass(frozen=True)
class TaskExample:
    text_a: tuple[str, ...]
    text_b: tuple[str, ...] | None = None
    label: int = 0


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "deep"
    num_classes: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in ("deep", "shallow"):
            raise ValueError("head kind must be 'deep' or 'shallow'")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")


@dataclass(frozen=True)
class GridSearchConfig:
    learning_rates: tuple[float, ...] = (1e-5, 5e-5, 1e-6, 5e-6)
    epochs: int = 30
    batch_size: int = 8
    val_policy: str = "split20"
    max_len: int = 128

    def __post_init__(self):
        object.__setattr__(self, "learning_rates", tuple(self.learning_rates))
        if not self.learning_rates:
            raise ValueError("learning_rates must not be empty")
        if self.val_policy not in ("split20", "dev_set"):
            raise ValueError("val_policy must be 'split20' or 'dev_set'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def build_input_ids(a: Sequence[int], b: Sequence[int] | None, max_len: int) -> list[int]:
    """``BOS a EOS`` or ``BOS a EOS b EOS``; the longer side is truncated first."""
    a = list(a)
    if b is None:
        return [BOS] + a[: max_len - 2] + [EOS]
    b = list(b)
    budget = max_len - 3
    if budget < 0:
        raise ValueError("max_len too small for a pair")
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    return [BOS] + a + [EOS] + b + [EOS]


def build_input(example: TaskExample, vocab: BpeVocab, table: MergeTable, max_len: int) -> list[int]:
    a = encode_sequence(example.text_a, vocab, table).ids
    b = None if example.text_b is None else encode_sequence(example.text_b, vocab, table).ids
    return build_input_ids(a, b, max_len)


def init_head(cfg: HeadConfig, hidden: int, seed: int, dtype=np.float64) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 7])
    c = cfg.num_classes
    if cfg.kind == "deep":
        return {
            "dense.w": rng.normal(0, 0.02, (hidden, hidden)).astype(dtype),
            "dense.b": np.zeros(hidden, dtype),
            "out.w": rng.normal(0, 0.02, (hidden, c)).astype(dtype),
            "out.b": np.zeros(c, dtype),
        }
    return {"out.w": rng.normal(0, 0.02, (hidden, c)).astype(dtype), "out.b": np.zeros(c, dtype)}


def head_forward(head: dict, pooled, cfg: HeadConfig, rng: np.random.Generator | None = None, replay=None):
    """Class logits [B, C]; dropout runs only when ``rng`` (or ``replay``) is given."""
    drop = DropoutSource(cfg.dropout, rng, replay)
    if pooled.shape[-1] != head["out.w"].shape[0]:
        raise ValueError(f"pooled dim {pooled.shape[-1]} != head input dim {head['out.w'].shape[0]}")
    if cfg.kind == "deep":
        x0 = drop(pooled)
        t = np.tanh(x0 @ head["dense.w"] + head["dense.b"])
        x1 = drop(t)
        logits = x1 @ head["out.w"] + head["out.b"]
        return logits, (x0, t, x1, drop.drawn)
    x0 = drop(pooled)
    return x0 @ head["out.w"] + head["out.b"], (x0, drop.drawn)


def head_backward(head: dict, cache, d_logits, cfg: HeadConfig):
    """Returns (head gradients, d_pooled)."""
    if cfg.kind == "deep":
        x0, t, x1, masks = cache
        g = {"out.w": x1.T @ d_logits, "out.b": d_logits.sum(0)}
        dx1 = d_logits @ head["out.w"].T
        if masks[1] is not None:
            dx1 = dx1 * masks[1]
        dpre = dx1 * (1.0 - t * t)
        g["dense.w"] = x0.T @ dpre
        g["dense.b"] = dpre.sum(0)
        dx0 = dpre @ head["dense.w"].T
    else:
        x0, masks = cache
        g = {"out.w": x0.T @ d_logits, "out.b": d_logits.sum(0)}
        dx0 = d_logits @ head["out.w"].T
    if masks[0] is not None:
        dx0 = dx0 * masks[0]
    return g, dx0


def pad_batch(rows: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = True
    return ids, mask


@dataclass
class Classifier:
    encoder: Parameters
    head: dict[str, np.ndarray]
    cfg: HeadConfig

    def logits(self, rows: Sequence[Sequence[int]], batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(rows), batch_size):
            ids, mask = pad_batch(rows[start : start + batch_size])
            hidden, _ = encoder_forward(self.encoder, ids, mask)
            logits, _ = head_forward(self.head, hidden[:, 0], self.cfg)
            out.append(logits)
        return np.concatenate(out)

    def predict(self, rows: Sequence[Sequence[int]]) -> list[int]:
        return [int(i) for i in self.logits(rows).argmax(-1)]

    def copy(self) -> "Classifier":
        return Classifier(self.encoder.copy(), {k: v.copy() for k, v in self.head.items()}, self.cfg)


def classifier_step(clf: Classifier, rows, labels, rng: np.random.Generator):
    """Forward + backward on one batch; returns (loss, encoder grads, head grads)."""
    ids, mask = pad_batch(rows)
    hidden, cache = encoder_forward(clf.encoder, ids, mask, mode="train", rng=rng)
    logits, hcache = head_forward(clf.head, hidden[:, 0], clf.cfg, rng=rng)
    loss, d_logits = mlm_loss(logits, np.asarray(labels))
    g_head, d_pooled = head_backward(clf.head, hcache, d_logits, clf.cfg)
    d_hidden = np.zeros_like(hidden)
    d_hidden[:, 0] = d_pooled
    g_enc = encoder_backward(clf.encoder, cache, d_hidden)
    return loss, g_enc, g_head


def accuracy(preds: Sequence[int], golds: Sequence[int]) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    if not golds:
        raise ValueError("accuracy of an empty set")
    return sum(int(p == g) for p, g in zip(preds, golds)) / len(golds)


def split_validation(examples: Sequence, seed: int, fraction: float = 0.2) -> tuple[list, list]:
    """Random (train, validation) split holding out ``fraction`` of the rows."""
    order = np.random.default_rng([seed, 20]).permutation(len(examples))
    n_val = int(round(fraction * len(examples)))
    val = [examples[i] for i in order[:n_val]]
    train = [examples[i] for i in order[n_val:]]
    return train, val


@dataclass
class GridRun:
    lr: float
    best_epoch: int
    val_accuracy: float
    val_curve: list[float] = field(default_factory=list)


@dataclass
class FinetuneResult:
    model: Classifier
    best_lr: float
    test_accuracy: float
    runs: list[GridRun]


def train_classifier(
    encoder: Parameters,
    train: Sequence[tuple[list[int], int]],
    val: Sequence[tuple[list[int], int]],
    head_cfg: HeadConfig,
    lr: float,
    epochs: int,
    batch_size: int,
    seed: int,
    adam: AdamConfig | None = None,
) -> tuple[Classifier, GridRun]:
    """Fine-tune at a constant ``lr``; keeps the epoch with the best validation accuracy.

    Among epochs tied on validation accuracy the latest one is kept, so a
    saturated validation set yields the most-trained model.
    """
    adam = adam or AdamConfig(warmup_steps=0, total_steps=0)
    clf = Classifier(encoder.copy(), init_head(head_cfg, encoder.cfg.H, seed, encoder.dtype), head_cfg)
    trainable = {k: v for k, v in clf.encoder.tensors.items() if k not in ENCODER_ONLY}
    trainable.update({f"head.{k}": v for k, v in clf.head.items()})
    state = AdamState.zeros_like(trainable)
    val_rows = [r for r, _ in val]
    val_golds = [y for _, y in val]
    best, best_acc, best_epoch, curve = None, -1.0, -1, []
    step = 0
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 30, epoch]).permutation(len(train))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            rng = np.random.default_rng([seed, 31, step])
            _, g_enc, g_head = classifier_step(clf, [train[i][0] for i in idx], [train[i][1] for i in idx], rng)
            grads = dict(g_enc)
            grads.update({f"head.{k}": v for k, v in g_head.items()})
            adam_step(trainable, grads, state, adam, lr)
            step += 1
        acc = accuracy(clf.predict(val_rows), val_golds)
        curve.append(acc)
        if acc >= best_acc:
            best, best_acc, best_epoch = clf.copy(), acc, epoch
    return best, GridRun(lr, best_epoch, best_acc, curve)


def finetune_task(
    encoder: Parameters,
    train: Sequence[TaskExample],
    test: Sequence[TaskExample],
    head_cfg: HeadConfig,
    grid: GridSearchConfig,
    seed: int,
    vocab: BpeVocab,
    table: MergeTable,
    dev: Sequence[TaskExample] | None = None,
    checkpoint_vocab_hash: str | None = None,
) -> FinetuneResult:
    """One full fine-tuning run per learning rate; the best on validation is tested."""
    if not train or not test:
        raise ValueError("empty dataset")
    if checkpoint_vocab_hash is not None and checkpoint_vocab_hash != vocab.hash():
        raise ValueError("checkpoint vocabulary does not match the dataset encoding")
    for ex in list(train) + list(test):
        if not 0 <= ex.label < head_cfg.num_classes:
            raise ValueError(f"label {ex.label} outside [0, {head_cfg.num_classes})")

    def encode(examples):
        return [(build_input(ex, vocab, table, grid.max_len), ex.label) for ex in examples]

    if grid.val_policy == "split20":
        fit, val = split_validation(list(train), seed)
    else:
        if not dev:
            raise ValueError("val_policy 'dev_set' needs a development set")
        fit, val = list(train), list(dev)
    fit_rows, val_rows, test_rows = encode(fit), encode(val), encode(test)

    runs = []
    best_model, best_run = None, None
    for i, lr in enumerate(grid.learning_rates):
        model, run = train_classifier(encoder, fit_rows, val_rows, head_cfg, lr, grid.epochs, grid.batch_size, seed * 1000 + i)
        logger.info("lr=%g best val accuracy %.4f at epoch %d", lr, run.val_accuracy, run.best_epoch)
        runs.append(run)
        if best_run is None or run.val_accuracy > best_run.val_accuracy:
            best_model, best_run = model, run
    test_acc = accuracy(best_model.predict([r for r, _ in test_rows]), [y for _, y in test_rows])
    return FinetuneResult(best_model, best_run.lr, test_acc, runs)
