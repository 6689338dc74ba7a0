import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import golden_array
from helpers import finite_difference_errors, random_batch
from mlmkit.masking import MaskedBatch
from mlmkit.transformer import (
    ContractViolation,
    ModelConfig,
    Parameters,
    backward,
    count_parameters,
    encode_tokens,
    forward,
    init_parameters,
    mlm_loss,
    param_shapes,
    replay_forward,
    softmax,
)
from oracles import naive_cross_entropy

TINY = ModelConfig(L=2, H=8, A=2, vocab_size=20, max_positions=8, dropout=0.1)


def make_batch(ids, attn=None):
    ids = np.asarray(ids)
    attn = np.ones(ids.shape, bool) if attn is None else np.asarray(attn)
    pos = np.broadcast_to(np.arange(ids.shape[1]), ids.shape).copy()
    return MaskedBatch(ids, np.where(attn, ids, -1), attn, pos)


def perturbed(cfg, seed=0):
    """Random init plus noise so scales/biases are not at their init values."""
    p = init_parameters(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    for k, t in p.tensors.items():
        t += rng.normal(0, 0.1, t.shape)
    return p


# ---------------------------------------------------------------- config and init


def test_config_invariants():
    with pytest.raises(ValueError):
        ModelConfig(H=10, A=3)
    with pytest.raises(ValueError):
        ModelConfig(H=64, d_ff=32)
    assert ModelConfig(H=64).d_ff == 256
    assert ModelConfig.preset("base").L == 12 and ModelConfig.preset("large").H == 1024


def test_init_deterministic():
    a = init_parameters(ModelConfig.preset("toy"), 7)
    b = init_parameters(ModelConfig.preset("toy"), 7)
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)


def test_init_values():
    p = init_parameters(ModelConfig.preset("toy", vocab_size=2000), 1)
    assert (p.tensors["layers.0.ln1.scale"] == 1).all()
    assert (p.tensors["layers.0.ln1.shift"] == 0).all()
    assert (p.tensors["layers.1.bq"] == 0).all()
    emb = p.tensors["token_embed"]
    assert emb.size >= 100_000
    assert abs(emb.mean()) < 0.005
    assert abs(emb.std() - 0.02) < 0.002


def test_parameter_count_matches_enumeration():
    for cfg in (ModelConfig.preset("toy"), ModelConfig.preset("toy", tie_mlm_head=False), TINY):
        params = init_parameters(cfg, 0)
        assert count_parameters(cfg) == sum(t.size for t in params.tensors.values())


def test_parameter_count_base_brackets_reported_size():
    n = count_parameters(ModelConfig.preset("base", vocab_size=50_005, max_positions=512))
    assert 110e6 <= n <= 150e6


def test_parameter_count_no_layers():
    cfg = ModelConfig(L=0, H=8, A=2, vocab_size=20, max_positions=8)
    assert count_parameters(cfg) == 20 * 8 + 8 * 8 + 2 * 8 + 20


def test_shapes_and_validation():
    p = init_parameters(TINY, 0)
    p.validate()
    assert [n for n, _ in param_shapes(TINY)] == list(p.tensors)
    bad = p.copy()
    bad.tensors["layers.0.wq"][0, 0] = np.nan
    with pytest.raises(ValueError):
        bad.validate()


# ---------------------------------------------------------------- forward


def test_softmax_rows_sum_to_one():
    p = perturbed(TINY)
    logits, _ = forward(p, make_batch([[4]]))
    assert np.allclose(softmax(logits).sum(-1), 1.0, atol=1e-6)


def test_attention_rows_normalised_and_padding_ignored():
    p = perturbed(TINY)
    batch = make_batch([[5, 6, 7, 8, 0, 0]], [[1, 1, 1, 1, 0, 0]])
    _, cache = forward(p, batch)
    for block in cache.blocks:
        probs = block["attn"][4]
        assert np.allclose(probs.sum(-1), 1.0, atol=1e-6)
        assert (probs[..., 4:] == 0).all()


def test_padding_columns_do_not_leak():
    p = perturbed(TINY)
    a = make_batch([[5, 6, 7, 8, 9, 11]], [[1, 1, 1, 1, 0, 0]])
    b = make_batch([[5, 6, 7, 8, 11, 9]], [[1, 1, 1, 1, 0, 0]])
    la, _ = forward(p, a)
    lb, _ = forward(p, b)
    assert np.allclose(la[:, :4], lb[:, :4], atol=1e-6)


def test_permutation_equivariance(rng):
    p = perturbed(TINY)
    ids = rng.integers(5, 20, size=(1, 6))
    pos = np.arange(6)[None]
    perm = rng.permutation(6)
    attn = np.ones((1, 6), bool)
    base = MaskedBatch(ids, ids, attn, pos)
    shuffled = MaskedBatch(ids[:, perm], ids[:, perm], attn, pos[:, perm])
    la, _ = forward(p, base)
    lb, _ = forward(p, shuffled)
    assert np.allclose(la[:, perm], lb, atol=1e-6)


def test_contract_violations():
    p = init_parameters(TINY, 0)
    with pytest.raises(ContractViolation):
        forward(p, make_batch([[25]]))
    with pytest.raises(ContractViolation):
        forward(p, make_batch([[5] * 9]))


def test_forward_deterministic_and_golden():
    cfg = ModelConfig.preset("toy", vocab_size=50, max_positions=16)
    p = init_parameters(cfg, 7)
    batch = make_batch([[2, 10, 4, 33, 17, 3]])
    a, _ = forward(p, batch)
    b, _ = forward(p, batch)
    assert np.array_equal(a, b)
    np.testing.assert_allclose(a, golden_array("toy_logits_seed7", a), rtol=0, atol=1e-10)


def test_train_mode_dropout_is_replayable(rng):
    p = perturbed(TINY)
    batch = random_batch(TINY, rng)
    logits, cache = forward(p, batch, "train", rng=np.random.default_rng(3))
    assert np.array_equal(replay_forward(p, batch, cache), logits)
    eval_logits, _ = forward(p, batch, "eval")
    assert not np.allclose(eval_logits, logits)


# ---------------------------------------------------------------- loss


def test_uniform_logits_give_log_v():
    logits = np.zeros((1, 3, 17))
    loss, _ = mlm_loss(logits, np.array([[1, -1, 5]]))
    assert loss == pytest.approx(math.log(17), abs=1e-12)


def test_confident_logits_drive_loss_to_zero():
    losses = []
    for margin in (1, 5, 20, 50):
        logits = np.zeros((1, 1, 5))
        logits[0, 0, 2] = margin
        losses.append(mlm_loss(logits, np.array([[2]]))[0])
    assert losses == sorted(losses, reverse=True) and losses[-1] < 1e-20


def test_loss_matches_naive_reference(rng):
    logits = rng.normal(0, 3, (3, 5, 11))
    labels = rng.integers(0, 11, (3, 5))
    labels[rng.random((3, 5)) < 0.4] = -1
    labels[0, 0] = 3
    loss, _ = mlm_loss(logits, labels)
    assert loss == pytest.approx(naive_cross_entropy(logits, labels), abs=1e-8)


def test_loss_needs_labels():
    with pytest.raises(ValueError):
        mlm_loss(np.zeros((1, 2, 3)), np.full((1, 2), -1))


def test_loss_gradient(rng):
    logits = rng.normal(size=(2, 3, 7))
    labels = np.array([[1, -1, 6], [0, 2, -1]])
    _, d = mlm_loss(logits, labels)
    errs = finite_difference_errors({"z": logits}, {"z": d}, lambda: mlm_loss(logits, labels)[0])
    assert errs["z"] < 1e-6


# ---------------------------------------------------------------- backward


def gradient_errors(cfg, seed=0, samples=None):
    p = perturbed(cfg, seed)
    batch = random_batch(cfg, np.random.default_rng(seed), b=2, t=5)
    logits, cache = forward(p, batch, "train", rng=np.random.default_rng(seed + 1))
    _, d = mlm_loss(logits, batch.labels)
    grads = backward(p, cache, d)
    masks = cache.dropout_masks

    def loss():
        return mlm_loss(forward(p, batch, "train", replay=masks)[0], batch.labels)[0]

    return finite_difference_errors(p.tensors, grads, loss, samples=samples, seed=seed)


@pytest.mark.parametrize("overrides", [
    {},
    {"norm": "post"},
    {"tie_mlm_head": False},
    {"dropout": 0.0, "norm": "post", "tie_mlm_head": False},
])
def test_every_tensor_matches_finite_differences(overrides):
    cfg = ModelConfig(**{**TINY.to_dict(), **overrides})
    errs = gradient_errors(cfg)
    assert set(errs) == {n for n, _ in param_shapes(cfg)}
    worst = max(errs, key=errs.get)
    assert errs[worst] <= 1e-4, (worst, errs[worst])


def test_zero_upstream_gives_zero_gradients(rng):
    p = perturbed(TINY)
    batch = random_batch(TINY, rng)
    logits, cache = forward(p, batch)
    grads = backward(p, cache, np.zeros_like(logits))
    assert all(not g.any() for g in grads.values())


def test_unused_embedding_rows_get_no_gradient(rng):
    cfg = ModelConfig(**{**TINY.to_dict(), "tie_mlm_head": False})
    p = perturbed(cfg)
    batch = make_batch([[5, 6, 7, 8]])
    logits, cache = forward(p, batch)
    _, d = mlm_loss(logits, batch.labels)
    g = backward(p, cache, d)["token_embed"]
    unused = [i for i in range(cfg.vocab_size) if i not in (5, 6, 7, 8)]
    assert not g[unused].any()
    assert g[[5, 6, 7, 8]].any()


def test_backward_rejects_mismatched_shapes(rng):
    p = perturbed(TINY)
    logits, cache = forward(p, random_batch(TINY, rng))
    with pytest.raises(ValueError):
        backward(p, cache, np.zeros(logits.shape[:-1] + (3,)))


# ---------------------------------------------------------------- encode_tokens


def test_encode_tokens_shapes_and_determinism(rng):
    p = perturbed(ModelConfig(L=1, H=8, A=2, vocab_size=20, max_positions=32))
    for _ in range(20):
        t = int(rng.integers(1, 33))
        ids = rng.integers(5, 20, t).tolist()
        h = encode_tokens(p, ids)
        assert h.shape == (t, 8)
        assert np.array_equal(h, encode_tokens(p, ids))


def test_encode_tokens_is_contextual():
    p = perturbed(TINY)
    a = encode_tokens(p, [2, 7, 9, 3])
    b = encode_tokens(p, [2, 7, 12, 3])
    assert np.linalg.norm(a[1] - b[1]) > 0


@given(st.lists(st.integers(0, 19), min_size=1, max_size=8))
def test_eval_forward_is_finite(ids):
    p = init_parameters(TINY, 0)
    logits, _ = forward(p, make_batch([ids]))
    assert np.isfinite(logits).all()


def test_float32_parameters_keep_dtype():
    p = init_parameters(TINY, 0, dtype=np.float32)
    assert isinstance(p, Parameters) and p.dtype == np.float32
    logits, _ = forward(p, make_batch([[5, 6]]))
    assert logits.dtype == np.float32
