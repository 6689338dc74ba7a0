"""Shared test-data builders (not oracles)."""

import random

import numpy as np

from mlmkit.bpe import BpeVocab, MergeTable, learn_bpe
from mlmkit.checkpoint import save_checkpoint
from mlmkit.masking import MaskedBatch
from mlmkit.synthetic import sentence
from mlmkit.transformer import ModelConfig, init_parameters


def random_word_freqs(rng: random.Random, max_words: int = 200) -> dict[str, int]:
    alphabet = rng.choice(["ab", "abc", "abcd", "abcdefg", "lowerstnid"])
    n = rng.randint(1, max_words)
    words = {}
    while len(words) < n:
        w = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 8)))
        words[w] = rng.randint(1, 20)
    return words


def as_corpus(word_freqs: dict[str, int]) -> list[list[str]]:
    return [[w] * f for w, f in word_freqs.items()]


def toy_sentences(n: int, seed: int = 0) -> list[list[str]]:
    rng = random.Random(seed)
    return [sentence(rng).lower().replace("'", "' ").replace(".", " .").split() for _ in range(n)]


def toy_bpe(n_sentences: int = 200, num_merges: int = 100, seed: int = 0):
    corpus = toy_sentences(n_sentences, seed)
    table, vocab = learn_bpe(corpus, num_merges)
    return corpus, table, vocab


def random_batch(cfg: ModelConfig, rng: np.random.Generator, b: int = 2, t: int = 6, pad: int = 1) -> MaskedBatch:
    ids = rng.integers(5, cfg.vocab_size, size=(b, t))
    attn = np.ones((b, t), dtype=bool)
    if pad:
        attn[-1, t - pad:] = False
        ids[-1, t - pad:] = 0
    labels = np.where(rng.random((b, t)) < 0.5, ids, -1)
    labels[~attn] = -1
    labels[0, 0] = ids[0, 0]
    positions = np.broadcast_to(np.arange(t), (b, t)).copy()
    return MaskedBatch(ids, labels, attn, positions)


def write_tiny_bundle(out_dir, seed: int = 0, **model_overrides):
    """A randomly initialised checkpoint with merges/vocab beside it."""
    corpus, table, vocab = toy_bpe(150, 80, seed)
    cfg = ModelConfig(L=1, H=16, A=2, vocab_size=len(vocab), max_positions=64, **model_overrides)
    params = init_parameters(cfg, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.save(out_dir / "merges.txt")
    vocab.save(out_dir / "vocab.txt")
    path = out_dir / "model.mlmf"
    save_checkpoint(path, params, vocab.hash(), 0)
    return path, params, vocab, table


def finite_difference_errors(tensors: dict, grads: dict, loss, samples: int | None = None,
                             seed: int = 0, step: float = 1e-4) -> dict[str, float]:
    """Per-tensor relative error of ``grads`` against central differences of ``loss()``.

    ``samples`` limits the check to that many random entries per tensor
    (all entries when None).
    """
    from oracles import central_difference, relative_error

    rng = np.random.default_rng(seed)
    out = {}
    for name, t in tensors.items():
        flat = list(np.ndindex(t.shape))
        if samples is not None and len(flat) > samples:
            flat = [flat[i] for i in rng.choice(len(flat), samples, replace=False)]
        numeric = np.array([central_difference(loss, t, idx, step) for idx in flat])
        analytic = np.array([grads[name][idx] for idx in flat])
        out[name] = relative_error(analytic, numeric)
    return out
