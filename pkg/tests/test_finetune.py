import math

import numpy as np
import pytest

from helpers import finite_difference_errors, write_tiny_bundle
from mlmkit.bpe import BOS, EOS
from mlmkit.finetune import (
    Classifier,
    GridSearchConfig,
    HeadConfig,
    TaskExample,
    accuracy,
    build_input,
    build_input_ids,
    classifier_step,
    finetune_task,
    head_backward,
    head_forward,
    init_head,
    split_validation,
)
from mlmkit.transformer import mlm_loss
from mlmkit.synthetic import marker_examples


def test_single_sentence_layout():
    ids = build_input_ids([10, 11, 12, 13, 14], None, 128)
    assert ids == [BOS, 10, 11, 12, 13, 14, EOS]


def test_pair_layout():
    ids = build_input_ids(list(range(10, 20)), [7, 8], 128)
    assert ids == [BOS, *range(10, 20), EOS, 7, 8, EOS]


def test_pair_exactly_at_limit_is_not_truncated():
    ids = build_input_ids([9] * 115, [8] * 10, 128)
    assert len(ids) == 128 and ids.count(9) == 115 and ids.count(8) == 10


def test_pair_truncates_longer_side_first():
    ids = build_input_ids([9] * 200, [8] * 10, 128)
    assert len(ids) == 128 and ids.count(9) == 115 and ids.count(8) == 10
    ids = build_input_ids([9] * 70, [8] * 70, 128)
    assert ids.count(9) + ids.count(8) == 125 and abs(ids.count(9) - ids.count(8)) <= 1


def test_single_sentence_truncation():
    ids = build_input_ids(list(range(5, 500)), None, 128)
    assert len(ids) == 128 and ids[-1] == EOS and ids[1:-1] == list(range(5, 131))


def test_pair_order_matters(tmp_path):
    _, _, vocab, table = write_tiny_bundle(tmp_path)
    a, b = ("le", "chat", "."), ("une", "maison", ".")
    assert build_input(TaskExample(a, b), vocab, table, 64) != build_input(TaskExample(b, a), vocab, table, 64)


def test_head_config_validation():
    with pytest.raises(ValueError):
        HeadConfig(kind="wide")
    with pytest.raises(ValueError):
        HeadConfig(num_classes=1)
    with pytest.raises(ValueError):
        GridSearchConfig(learning_rates=())


@pytest.mark.parametrize("kind", ["deep", "shallow"])
def test_head_gradients_match_finite_differences(kind, rng):
    cfg = HeadConfig(kind=kind, num_classes=3, dropout=0.2)
    head = {k: v + rng.normal(0, 0.3, v.shape) for k, v in init_head(cfg, 6, 0).items()}
    pooled = rng.normal(size=(4, 6))
    labels = np.array([0, 2, 1, 2])
    logits, cache = head_forward(head, pooled, cfg, rng=np.random.default_rng(1))
    masks = cache[-1]
    _, d = mlm_loss(logits, labels)
    grads, d_pooled = head_backward(head, cache, d, cfg)

    def loss():
        return mlm_loss(head_forward(head, pooled, cfg, replay=masks)[0], labels)[0]

    errs = finite_difference_errors({**head, "pooled": pooled}, {**grads, "pooled": d_pooled}, loss)
    assert max(errs.values()) <= 1e-6, errs


def test_shallow_head_hand_trace():
    cfg = HeadConfig(kind="shallow", num_classes=3, dropout=0.0)
    head = {"out.w": np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]), "out.b": np.array([0.0, 0.5, -0.5])}
    pooled = np.array([[1.0, 2.0, 3.0, 0.0]])
    logits, cache = head_forward(head, pooled, cfg)
    assert logits.tolist() == [[1.0, 2.5, 2.5]]
    p = np.exp([1.0, 2.5, 2.5]) / np.exp([1.0, 2.5, 2.5]).sum()
    loss, d = mlm_loss(logits, np.array([0]))
    assert loss == pytest.approx(-math.log(p[0]))
    grads, _ = head_backward(head, cache, d, cfg)
    want = p - np.array([1, 0, 0])
    np.testing.assert_allclose(grads["out.b"], want)
    np.testing.assert_allclose(grads["out.w"], np.outer(pooled[0], want))


@pytest.mark.parametrize("kind,c", [("deep", 2), ("shallow", 3)])
def test_zero_weights_give_log_c(kind, c, rng):
    cfg = HeadConfig(kind=kind, num_classes=c)
    head = {k: np.zeros_like(v) for k, v in init_head(cfg, 8, 0).items()}
    logits, _ = head_forward(head, rng.normal(size=(5, 8)), cfg)
    loss, _ = mlm_loss(logits, rng.integers(0, c, 5))
    assert loss == pytest.approx(math.log(c))


def test_head_rejects_wrong_width(rng):
    cfg = HeadConfig()
    with pytest.raises(ValueError):
        head_forward(init_head(cfg, 8, 0), rng.normal(size=(2, 6)), cfg)


def test_full_model_gradient_reaches_encoder(tmp_path, rng):
    _, params, _, _ = write_tiny_bundle(tmp_path)
    clf = Classifier(params, init_head(HeadConfig(), params.cfg.H, 0), HeadConfig())
    loss, g_enc, g_head = classifier_step(clf, [[2, 9, 10, 3], [2, 11, 3]], [0, 1], np.random.default_rng(0))
    assert math.isfinite(loss)
    assert np.abs(g_enc["layers.0.wq"]).sum() > 0 and np.abs(g_head["dense.w"]).sum() > 0


def test_accuracy():
    assert accuracy([1, 0, 1, 1], [1, 1, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        accuracy([1], [1, 0])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_split_validation_is_eighty_twenty_and_disjoint():
    train, val = split_validation(list(range(100)), seed=3)
    assert len(train) == 80 and len(val) == 20
    assert sorted(train + val) == list(range(100))
    assert split_validation(list(range(100)), seed=3) == (train, val)


def examples(n, seed):
    return [TaskExample(tuple(t.split()), None, y) for t, y in marker_examples(n, seed)]


def small_run(tmp_path, seed=0):
    _, params, vocab, table = write_tiny_bundle(tmp_path)
    grid = GridSearchConfig(learning_rates=(1e-3, 1e-4, 1e-5, 1e-6), epochs=2, batch_size=8, max_len=32)
    return finetune_task(params, examples(40, 1), examples(20, 2), HeadConfig(), grid, seed, vocab, table)


def test_grid_runs_every_learning_rate(tmp_path):
    res = small_run(tmp_path)
    assert [r.lr for r in res.runs] == [1e-3, 1e-4, 1e-5, 1e-6]
    assert all(len(r.val_curve) == 2 for r in res.runs)
    for r in res.runs:  # latest epoch wins among validation ties
        assert r.best_epoch == max(i for i, a in enumerate(r.val_curve) if a == max(r.val_curve))
    best = max(res.runs, key=lambda r: r.val_accuracy)
    assert res.best_lr == best.lr
    assert 0 <= res.test_accuracy <= 1


def test_finetuning_is_deterministic(tmp_path):
    a, b = small_run(tmp_path / "a"), small_run(tmp_path / "b")
    assert a.test_accuracy == b.test_accuracy and a.best_lr == b.best_lr
    assert [r.val_curve for r in a.runs] == [r.val_curve for r in b.runs]
    for name, t in a.model.head.items():
        assert np.array_equal(t, b.model.head[name])


def test_dev_policy_requires_dev_set(tmp_path):
    _, params, vocab, table = write_tiny_bundle(tmp_path)
    grid = GridSearchConfig(val_policy="dev_set", epochs=1)
    with pytest.raises(ValueError, match="development"):
        finetune_task(params, examples(10, 1), examples(10, 2), HeadConfig(), grid, 0, vocab, table)


def test_label_out_of_range(tmp_path):
    _, params, vocab, table = write_tiny_bundle(tmp_path)
    bad = [TaskExample(("a",), None, 5)]
    with pytest.raises(ValueError, match="label"):
        finetune_task(params, bad, bad, HeadConfig(), GridSearchConfig(epochs=1), 0, vocab, table)


def test_vocab_hash_mismatch(tmp_path):
    _, params, vocab, table = write_tiny_bundle(tmp_path)
    with pytest.raises(ValueError, match="vocabulary"):
        finetune_task(params, examples(10, 1), examples(10, 2), HeadConfig(), GridSearchConfig(epochs=1), 0,
                      vocab, table, checkpoint_vocab_hash="0" * 64)
