"""Word-sense disambiguation on contextual vectors.

Verbs: each sense is the mean of its examples' target vectors and a test
instance takes the sense with the highest cosine similarity.  Nouns: a
stack of trained transformer blocks over frozen encoder word vectors
predicts a synset per word with a softmax; ensembles average softmaxes.
"""

from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bpe import BOS, EOS, BpeVocab, MergeTable, encode_sequence
from .pretrain import AdamConfig, AdamState, adam_step
from .transformer import (
    LAYER_TENSORS,
    DropoutSource,
    Parameters,
    block_backward,
    block_forward,
    encode_tokens,
    init_tensor,
    layer_view,
    layernorm_backward,
    layernorm_forward,
    mlm_loss,
    softmax,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WsdInstance:
    tokens: tuple[str, ...]
    target_index: int
    lemma: str
    sense_id: str | None = None

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.tokens):
            raise ValueError(f"target index {self.target_index} outside a {len(self.tokens)}-token sentence")


@dataclass
class Sense:
    sense_id: str
    gloss: str
    examples: list[tuple[tuple[str, ...], int]] = field(default_factory=list)


class SenseInventory:
    """lemma -> ordered senses, each with a gloss and example usages."""

    def __init__(self):
        self.senses: dict[str, list[Sense]] = {}

    def add(self, lemma: str, sense_id: str, gloss: str, example: Sequence[str] | None = None, target: int = 0):
        senses = self.senses.setdefault(lemma, [])
        for s in senses:
            if s.sense_id == sense_id:
                break
        else:
            s = Sense(sense_id, gloss)
            senses.append(s)
        if example is not None:
            s.examples.append((tuple(example), target))

    def __contains__(self, lemma: str) -> bool:
        return lemma in self.senses

    def __getitem__(self, lemma: str) -> list[Sense]:
        return self.senses[lemma]


@dataclass
class SenseVector:
    sense_id: str
    vector: np.ndarray
    support: int


class ContextEncoder:
    """Word-level contextual vectors from the pretrained encoder.

    A word's vector pools its sub-word states: ``mean`` (default) or
    ``first``.  ``layer=None`` uses the final normalized states, an int
    picks a raw block output (e.g. ``-1`` for the last block before the
    final norm).
    """

    def __init__(self, params: Parameters, vocab: BpeVocab, table: MergeTable,
                 pooling: str = "mean", layer: int | None = None):
        if pooling not in ("mean", "first"):
            raise ValueError("pooling must be 'mean' or 'first'")
        self.params = params
        self.vocab = vocab
        self.table = table
        self.pooling = pooling
        self.layer = layer

    @property
    def dim(self) -> int:
        return self.params.cfg.H

    def word_vectors(self, tokens: Sequence[str]) -> np.ndarray:
        enc = encode_sequence(tokens, self.vocab, self.table)
        ids = [BOS, *enc.ids, EOS]
        limit = self.params.cfg.max_positions
        if len(ids) > limit:
            ids = ids[: limit - 1] + [EOS]
        states = encode_tokens(self.params, ids, self.layer)
        out = np.zeros((len(tokens), self.dim), dtype=states.dtype)
        for w, (start, end) in enumerate(enc.word_boundaries):
            start, end = start + 1, min(end + 1, len(ids) - 1)
            if end <= start:
                out[w] = np.nan
                continue
            out[w] = states[start] if self.pooling == "first" else states[start:end].mean(0)
        return out


def target_vector(encoder: ContextEncoder, instance: WsdInstance) -> np.ndarray:
    vec = encoder.word_vectors(instance.tokens)[instance.target_index]
    if np.isnan(vec).any():
        raise ValueError(f"target word {instance.tokens[instance.target_index]!r} maps to no sub-word")
    return vec


def build_sense_vectors(encoder: ContextEncoder, inventory: SenseInventory, lemma: str) -> list[SenseVector]:
    if lemma not in inventory:
        raise KeyError(f"lemma {lemma!r} not in the inventory")
    out = []
    for sense in inventory[lemma]:
        if not sense.examples:
            logger.warning("sense %s of %s has no examples; skipped", sense.sense_id, lemma)
            continue
        vecs = [target_vector(encoder, WsdInstance(toks, t, lemma)) for toks, t in sense.examples]
        out.append(SenseVector(sense.sense_id, np.mean(vecs, axis=0), len(vecs)))
    return out


def nearest_sense(vector: np.ndarray, senses: Sequence[SenseVector]) -> str:
    """Sense with the highest cosine similarity; the first one wins ties."""
    if not senses:
        raise ValueError("no candidate senses")
    v = np.asarray(vector, dtype=np.float64)
    vn = np.linalg.norm(v)
    mat = np.stack([np.asarray(s.vector, dtype=np.float64) for s in senses])
    norms = np.linalg.norm(mat, axis=1)
    if vn == 0 or (norms == 0).any():
        raise ValueError("cosine similarity with a zero-norm vector")
    sims = (mat @ v) / (norms * vn)
    return senses[int(np.argmax(sims))].sense_id


def awe_vector(embeddings: dict[str, np.ndarray], instance: WsdInstance, window: int = 5) -> tuple[np.ndarray, bool]:
    """Mean static embedding of up to ``window`` words on each side of the target.

    Out-of-vocabulary words are skipped.  Returns ``(vector, usable)``;
    with no usable neighbour the vector is zero and ``usable`` is False.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    t = instance.target_index
    lo, hi = max(0, t - window), min(len(instance.tokens), t + window + 1)
    neighbours = [instance.tokens[i] for i in range(lo, hi) if i != t]
    vecs = [embeddings[w] for w in neighbours if w in embeddings]
    if not vecs:
        dim = len(next(iter(embeddings.values()))) if embeddings else 0
        return np.zeros(dim), False
    return np.mean(vecs, axis=0), True


def disambiguate_verbs(encoder: ContextEncoder, inventory: SenseInventory,
                       instances: Sequence[WsdInstance]) -> list[str | None]:
    cache: dict[str, list[SenseVector]] = {}
    preds: list[str | None] = []
    for inst in instances:
        if inst.lemma not in inventory:
            preds.append(None)
            continue
        if inst.lemma not in cache:
            cache[inst.lemma] = build_sense_vectors(encoder, inventory, inst.lemma)
        senses = cache[inst.lemma]
        preds.append(nearest_sense(target_vector(encoder, inst), senses) if senses else None)
    return preds


def f1_score(preds: Sequence, golds: Sequence) -> float:
    """Micro F1 over instances; ``None`` predictions are abstentions."""
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions, {len(golds)} golds")
    if not golds:
        raise ValueError("F1 of an empty set")
    attempted = sum(p is not None for p in preds)
    correct = sum(p is not None and p == g for p, g in zip(preds, golds))
    if correct == 0:
        return 0.0
    precision = correct / attempted
    recall = correct / len(golds)
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------- noun classifier


@dataclass(frozen=True)
class StackConfig:
    layers: int = 6
    d_ff: int = 3072
    heads: int = 12
    dropout: float = 0.1

    @classmethod
    def toy(cls, hidden: int) -> "StackConfig":
        return cls(layers=2, d_ff=4 * hidden, heads=4)


@dataclass
class NounClassifier:
    cfg: StackConfig
    synsets: tuple[str, ...]
    tensors: dict[str, np.ndarray]

    @property
    def hidden(self) -> int:
        return self.tensors["out.w"].shape[0]


def init_noun_classifier(cfg: StackConfig, hidden: int, synsets: Sequence[str], seed: int,
                         dtype=np.float64) -> NounClassifier:
    if not synsets:
        raise ValueError("empty synset vocabulary")
    if hidden % cfg.heads:
        raise ValueError(f"hidden size {hidden} not divisible by {cfg.heads} heads")
    rng = np.random.default_rng([seed, 11])
    H, F = hidden, cfg.d_ff
    shapes = {
        "ln1.scale": (H,), "ln1.shift": (H,), "wq": (H, H), "bq": (H,), "wk": (H, H), "bk": (H,),
        "wv": (H, H), "bv": (H,), "wo": (H, H), "bo": (H,), "ln2.scale": (H,), "ln2.shift": (H,),
        "w1": (H, F), "b1": (F,), "w2": (F, H), "b2": (H,),
    }  # fmt: skip
    tensors = {}
    for i in range(cfg.layers):
        for k in LAYER_TENSORS:
            tensors[f"layers.{i}.{k}"] = init_tensor(k, shapes[k], rng, dtype)
    tensors["final_ln.scale"] = np.ones(H, dtype)
    tensors["final_ln.shift"] = np.zeros(H, dtype)
    tensors["out.w"] = rng.normal(0, 0.02, (H, len(synsets))).astype(dtype)
    tensors["out.b"] = np.zeros(len(synsets), dtype)
    return NounClassifier(cfg, tuple(synsets), tensors)


def stack_forward(model: NounClassifier, x, mask, rng: np.random.Generator | None = None, replay=None):
    """Synset logits [B, N, S] for word vectors [B, N, H]."""
    cfg = model.cfg
    t = model.tensors
    drop = DropoutSource(cfg.dropout, rng, replay)
    caches = []
    for i in range(cfg.layers):
        x, c = block_forward(layer_view(t, f"layers.{i}."), x, mask, cfg.heads, "pre", drop)
        caches.append(c)
    h, ln = layernorm_forward(x, t["final_ln.scale"], t["final_ln.shift"])
    logits = h @ t["out.w"] + t["out.b"]
    return logits, (caches, ln, h, drop.drawn)


def stack_backward(model: NounClassifier, cache, d_logits) -> dict[str, np.ndarray]:
    caches, ln, h, _ = cache
    t = model.tensors
    g = {
        "out.w": h.reshape(-1, h.shape[-1]).T @ d_logits.reshape(-1, d_logits.shape[-1]),
        "out.b": d_logits.sum((0, 1)),
    }
    dh = d_logits @ t["out.w"].T
    dx, g["final_ln.scale"], g["final_ln.shift"] = layernorm_backward(dh, ln, t["final_ln.scale"])
    for i in reversed(range(model.cfg.layers)):
        prefix = f"layers.{i}."
        dx, gl = block_backward(layer_view(t, prefix), dx, caches[i], model.cfg.heads, "pre")
        g.update({prefix + k: v for k, v in gl.items()})
    return {k: g[k] for k in t}


@dataclass
class NounExample:
    """Frozen word vectors of one sentence and per-word synset ids (-1 = unannotated)."""

    states: np.ndarray  # [N, H]
    labels: np.ndarray  # [N]


def _pad(examples: Sequence[NounExample]):
    n = max(len(e.labels) for e in examples)
    H = examples[0].states.shape[1]
    x = np.zeros((len(examples), n, H), dtype=examples[0].states.dtype)
    y = np.full((len(examples), n), -1, dtype=np.int64)
    mask = np.zeros((len(examples), n), dtype=bool)
    for i, e in enumerate(examples):
        k = len(e.labels)
        x[i, :k] = e.states
        y[i, :k] = e.labels
        mask[i, :k] = True
    return x, y, mask


def train_noun_classifier(
    examples: Sequence[NounExample],
    synsets: Sequence[str],
    cfg: StackConfig,
    seed: int,
    epochs: int = 20,
    batch_size: int = 16,
    lr: float = 1e-3,
) -> NounClassifier:
    """Cross-entropy over annotated positions only, Adam at a constant rate."""
    if not examples:
        raise ValueError("no training examples")
    model = init_noun_classifier(cfg, examples[0].states.shape[1], synsets, seed, examples[0].states.dtype)
    adam = AdamConfig(warmup_steps=0, total_steps=0, weight_decay=0.0)
    state = AdamState.zeros_like(model.tensors)
    step = 0
    for epoch in range(epochs):
        order = np.random.default_rng([seed, 12, epoch]).permutation(len(examples))
        for start in range(0, len(order), batch_size):
            batch = [examples[i] for i in order[start : start + batch_size]]
            x, y, mask = _pad(batch)
            if not (y >= 0).any():
                continue
            logits, cache = stack_forward(model, x, mask, rng=np.random.default_rng([seed, 13, step]))
            _, d = mlm_loss(logits, y)
            adam_step(model.tensors, stack_backward(model, cache, d), state, adam, lr)
            step += 1
    return model


def noun_probabilities(model: NounClassifier, examples: Sequence[NounExample]) -> list[np.ndarray]:
    """Per-sentence softmax rows [N, S] (eval mode)."""
    out = []
    for e in examples:
        x, _, mask = _pad([e])
        logits, _ = stack_forward(model, x, mask)
        out.append(softmax(logits[0]))
    return out


def predict_nouns(model: NounClassifier, examples: Sequence[NounExample]) -> list[list[str]]:
    return ensemble_predict([model], examples)


def ensemble_predict(models: Sequence[NounClassifier], examples: Sequence[NounExample]) -> list[list[str]]:
    """Argmax of the averaged softmax, per word; no lemma filtering."""
    if not models:
        raise ValueError("empty ensemble")
    synsets = models[0].synsets
    for m in models[1:]:
        if m.synsets != synsets:
            raise ValueError("ensemble members have different synset vocabularies")
    per_model = [noun_probabilities(m, examples) for m in models]
    out = []
    for i in range(len(examples)):
        mean = np.mean([p[i] for p in per_model], axis=0)
        out.append([synsets[j] for j in mean.argmax(-1)])
    return out


def annotated_pairs(preds: Sequence[Sequence[str]], examples: Sequence[NounExample], synsets: Sequence[str]):
    """Flatten to (prediction, gold) over annotated words.

    A label ``>= len(synsets)`` marks a gold sense outside the model's
    vocabulary; its gold is None, which no prediction matches.
    """
    p, g = [], []
    for row, e in zip(preds, examples):
        for k, label in enumerate(e.labels):
            if label >= 0:
                p.append(row[k])
                g.append(synsets[label] if label < len(synsets) else None)
    return p, g


@dataclass
class NounReport:
    f1_each: list[float]
    mean: float
    std: float
    ensemble: float


def evaluate_noun_models(models: Sequence[NounClassifier], examples: Sequence[NounExample]) -> NounReport:
    synsets = models[0].synsets
    each = []
    for m in models:
        p, g = annotated_pairs(predict_nouns(m, examples), examples, synsets)
        each.append(f1_score(p, g))
    p, g = annotated_pairs(ensemble_predict(models, examples), examples, synsets)
    std = statistics.stdev(each) if len(each) > 1 else 0.0
    return NounReport(each, statistics.fmean(each), std, f1_score(p, g))
