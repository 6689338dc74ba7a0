"""Bidirectional transformer encoder with an MLM head, in plain numpy.

Forward passes return an activation cache; backward passes consume it
and return gradients keyed like the parameters.  Blocks are pre-norm by
default (``norm="post"`` gives the original BERT ordering).  GELU is the
exact erf form.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
INIT_STD = 0.02

LAYER_TENSORS = (
    "ln1.scale", "ln1.shift",
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln2.scale", "ln2.shift",
    "w1", "b1", "w2", "b2",
)  # fmt: skip


class ContractViolation(ValueError):
    """Inputs outside the model's declared domain."""


@dataclass(frozen=True)
class ModelConfig:
    L: int = 2
    H: int = 64
    A: int = 4
    d_ff: int | None = None
    vocab_size: int = 1000
    max_positions: int = 128
    dropout: float = 0.1
    tie_mlm_head: bool = True
    norm: str = "pre"

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.H)
        if self.L < 0 or self.H < 1 or self.A < 1:
            raise ValueError("L >= 0, H >= 1, A >= 1 required")
        if self.H % self.A:
            raise ValueError(f"H={self.H} is not divisible by A={self.A}")
        if self.d_ff < self.H:
            raise ValueError("d_ff must be >= H")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.norm not in ("pre", "post"):
            raise ValueError("norm must be 'pre' or 'post'")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        sizes = {
            "base": dict(L=12, H=768, A=12),
            "large": dict(L=24, H=1024, A=16),
            "toy": dict(L=2, H=64, A=4),
        }
        return cls(**{**sizes[name], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """The fixed tensor inventory, in checkpoint order."""
    V, P, H, F = cfg.vocab_size, cfg.max_positions, cfg.H, cfg.d_ff
    per_layer = {
        "ln1.scale": (H,), "ln1.shift": (H,),
        "wq": (H, H), "bq": (H,), "wk": (H, H), "bk": (H,),
        "wv": (H, H), "bv": (H,), "wo": (H, H), "bo": (H,),
        "ln2.scale": (H,), "ln2.shift": (H,),
        "w1": (H, F), "b1": (F,), "w2": (F, H), "b2": (H,),
    }  # fmt: skip
    shapes = [("token_embed", (V, H)), ("pos_embed", (P, H))]
    for i in range(cfg.L):
        shapes += [(f"layers.{i}.{k}", per_layer[k]) for k in LAYER_TENSORS]
    shapes += [("final_ln.scale", (H,)), ("final_ln.shift", (H,)), ("mlm_bias", (V,))]
    if not cfg.tie_mlm_head:
        shapes.append(("mlm_proj", (H, V)))
    return shapes


def count_parameters(cfg: ModelConfig) -> int:
    V, P, H, F, L = cfg.vocab_size, cfg.max_positions, cfg.H, cfg.d_ff, cfg.L
    attention = 4 * (H * H + H)
    ffn = H * F + F + F * H + H
    norms = 2 * 2 * H
    head = V + (0 if cfg.tie_mlm_head else H * V)
    return V * H + P * H + L * (attention + ffn + norms) + 2 * H + head


@dataclass
class Parameters:
    cfg: ModelConfig
    tensors: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.tensors.items())

    def copy(self) -> "Parameters":
        return Parameters(self.cfg, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "Parameters":
        return Parameters(self.cfg, {k: v.astype(dtype) for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return self.tensors["token_embed"].dtype

    def validate(self) -> None:
        expected = param_shapes(self.cfg)
        if [n for n, _ in expected] != list(self.tensors):
            raise ValueError("tensor inventory does not match the config")
        for name, shape in expected:
            t = self.tensors[name]
            if t.shape != shape:
                raise ValueError(f"{name}: shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"{name}: non-finite values")


def init_tensor(name: str, shape: tuple[int, ...], rng: np.random.Generator, dtype) -> np.ndarray:
    if name.endswith(".scale"):
        return np.ones(shape, dtype=dtype)
    if len(shape) == 1:
        return np.zeros(shape, dtype=dtype)
    return rng.normal(0.0, INIT_STD, size=shape).astype(dtype)


def init_parameters(cfg: ModelConfig, seed: int, dtype=np.float64) -> Parameters:
    rng = np.random.default_rng(seed)
    tensors = {name: init_tensor(name, shape, rng, dtype) for name, shape in param_shapes(cfg)}
    return Parameters(cfg, tensors)


# ---------------------------------------------------------------- primitives


def layernorm_forward(x, scale, shift):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * scale + shift, (xhat, rstd)


def layernorm_backward(dy, cache, scale):
    xhat, rstd = cache
    axes = tuple(range(dy.ndim - 1))
    dscale = (dy * xhat).sum(axes)
    dshift = dy.sum(axes)
    dxhat = dy * scale
    dx = rstd * (
        dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dscale, dshift


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _flat_grad(x, d):
    # x @ W summed over all leading axes.
    return x.reshape(-1, x.shape[-1]).T @ d.reshape(-1, d.shape[-1])


class DropoutSource:
    """Draws inverted-dropout masks, or replays previously drawn ones."""

    def __init__(self, p: float, rng: np.random.Generator | None, replay: list | None = None):
        self.p = p
        self.rng = rng
        self.replay = list(replay) if replay is not None else None
        self.drawn: list = []

    def __call__(self, x):
        if self.replay is not None:
            mask = self.replay.pop(0)
        elif self.p == 0.0 or self.rng is None:
            mask = None
        else:
            keep = self.rng.random(x.shape) >= self.p
            mask = (keep / (1.0 - self.p)).astype(x.dtype)
        self.drawn.append(mask)
        return x if mask is None else x * mask


def _apply_mask(d, mask):
    return d if mask is None else d * mask


# ---------------------------------------------------------------- attention


def attention_forward(p, x, key_mask, heads):
    B, T, H = x.shape
    dh = H // heads

    def split(t):
        return t.reshape(B, T, heads, dh).transpose(0, 2, 1, 3)

    q = split(x @ p["wq"] + p["bq"])
    k = split(x @ p["wk"] + p["bk"])
    v = split(x @ p["wv"] + p["bv"])
    scores = (q @ k.transpose(0, 1, 3, 2)) / math.sqrt(dh)
    scores = np.where(key_mask[:, None, None, :], scores, -np.inf)
    probs = softmax(scores)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, H)
    out = ctx @ p["wo"] + p["bo"]
    return out, (x, q, k, v, probs, ctx)


def attention_backward(p, dout, cache, heads):
    x, q, k, v, probs, ctx = cache
    B, T, H = x.shape
    dh = H // heads
    g = {"wo": _flat_grad(ctx, dout), "bo": dout.sum((0, 1))}
    dctx = (dout @ p["wo"].T).reshape(B, T, heads, dh).transpose(0, 2, 1, 3)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True))
    dscores /= math.sqrt(dh)
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, T, H)

    dx = np.zeros_like(x)
    for name, dt in (("q", dq), ("k", dk), ("v", dv)):
        dt = merge(dt)
        g["w" + name] = _flat_grad(x, dt)
        g["b" + name] = dt.sum((0, 1))
        dx += dt @ p["w" + name].T
    return dx, g


# ---------------------------------------------------------------- blocks


def block_forward(p, x, key_mask, heads, norm, drop):
    """One encoder block. ``p`` maps short names (``wq``, ``ln1.scale``...)."""
    c = {}
    if norm == "pre":
        h, c["ln1"] = layernorm_forward(x, p["ln1.scale"], p["ln1.shift"])
        a, c["attn"] = attention_forward(p, h, key_mask, heads)
        x1 = x + drop(a)
        h2, c["ln2"] = layernorm_forward(x1, p["ln2.scale"], p["ln2.shift"])
    else:
        a, c["attn"] = attention_forward(p, x, key_mask, heads)
        x1, c["ln1"] = layernorm_forward(x + drop(a), p["ln1.scale"], p["ln1.shift"])
        h2 = x1
    c["drop_attn"] = drop.drawn[-1]
    pre = h2 @ p["w1"] + p["b1"]
    act = gelu(pre)
    f = drop(act @ p["w2"] + p["b2"])
    c["drop_ffn"] = drop.drawn[-1]
    c["ffn"] = (h2, pre, act)
    if norm == "pre":
        out = x1 + f
    else:
        out, c["ln2"] = layernorm_forward(x1 + f, p["ln2.scale"], p["ln2.shift"])
    return out, c


def block_backward(p, dout, c, heads, norm):
    g = {}
    if norm == "post":
        dsum, g["ln2.scale"], g["ln2.shift"] = layernorm_backward(dout, c["ln2"], p["ln2.scale"])
        dx1, df = dsum, dsum
    else:
        dx1, df = dout, dout
    df = _apply_mask(df, c["drop_ffn"])
    h2, pre, act = c["ffn"]
    g["w2"] = _flat_grad(act, df)
    g["b2"] = df.sum((0, 1))
    dpre = (df @ p["w2"].T) * gelu_grad(pre)
    g["w1"] = _flat_grad(h2, dpre)
    g["b1"] = dpre.sum((0, 1))
    dh2 = dpre @ p["w1"].T
    if norm == "pre":
        dh, g["ln2.scale"], g["ln2.shift"] = layernorm_backward(dh2, c["ln2"], p["ln2.scale"])
        dx1 = dx1 + dh
        dx, da = dx1, dx1
        da = _apply_mask(da, c["drop_attn"])
        dh1, ga = attention_backward(p, da, c["attn"], heads)
        dxa, g["ln1.scale"], g["ln1.shift"] = layernorm_backward(dh1, c["ln1"], p["ln1.scale"])
        dx = dx + dxa
    else:
        dx1 = dx1 + dh2
        dsum, g["ln1.scale"], g["ln1.shift"] = layernorm_backward(dx1, c["ln1"], p["ln1.scale"])
        da = _apply_mask(dsum, c["drop_attn"])
        dxa, ga = attention_backward(p, da, c["attn"], heads)
        dx = dsum + dxa
    g.update(ga)
    return dx, g


def layer_view(tensors: dict, prefix: str) -> dict:
    return {k: tensors[f"{prefix}{k}"] for k in LAYER_TENSORS}


# ---------------------------------------------------------------- encoder


@dataclass
class ActivationCache:
    ids: np.ndarray
    positions: np.ndarray
    key_mask: np.ndarray
    mode: str
    dropout_masks: list = field(default_factory=list)
    emb_mask: np.ndarray | None = None
    blocks: list = field(default_factory=list)
    layer_outputs: list = field(default_factory=list)
    final_ln: tuple | None = None
    hidden: np.ndarray | None = None
    logits_shape: tuple | None = None


def _check_inputs(cfg: ModelConfig, ids, positions):
    if ids.ndim != 2:
        raise ContractViolation("ids must be [B, T]")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ContractViolation(f"token id out of range [0, {cfg.vocab_size})")
    if ids.shape[1] > cfg.max_positions:
        raise ContractViolation(f"sequence length {ids.shape[1]} > max_positions {cfg.max_positions}")
    if positions.size and (positions.min() < 0 or positions.max() >= cfg.max_positions):
        raise ContractViolation("position id out of range")


def encoder_forward(
    params: Parameters,
    ids,
    key_mask=None,
    positions=None,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    replay: list | None = None,
) -> tuple[np.ndarray, ActivationCache]:
    """Final-layer hidden states [B, T, H] plus the cache for backward.

    Dropout is active only when ``mode == "train"`` and an ``rng`` is given,
    or when ``replay`` supplies masks from an earlier cache.
    """
    cfg = params.cfg
    ids = np.asarray(ids, dtype=np.int64)
    if key_mask is None:
        key_mask = np.ones(ids.shape, dtype=bool)
    key_mask = np.asarray(key_mask, dtype=bool)
    if positions is None:
        positions = np.broadcast_to(np.arange(ids.shape[1]), ids.shape)
    positions = np.asarray(positions, dtype=np.int64)
    _check_inputs(cfg, ids, positions)
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")

    t = params.tensors
    p_drop = cfg.dropout if mode == "train" else 0.0
    drop = DropoutSource(p_drop, rng if mode == "train" else None, replay)
    cache = ActivationCache(ids, positions, key_mask, mode)

    x = drop(t["token_embed"][ids] + t["pos_embed"][positions])
    cache.emb_mask = drop.drawn[-1]
    cache.layer_outputs.append(x)
    for i in range(cfg.L):
        x, c = block_forward(layer_view(t, f"layers.{i}."), x, key_mask, cfg.A, cfg.norm, drop)
        cache.blocks.append(c)
        cache.layer_outputs.append(x)
    hidden, cache.final_ln = layernorm_forward(x, t["final_ln.scale"], t["final_ln.shift"])
    cache.hidden = hidden
    cache.dropout_masks = drop.drawn
    return hidden, cache


def encoder_backward(params: Parameters, cache: ActivationCache, d_hidden) -> dict[str, np.ndarray]:
    cfg = params.cfg
    t = params.tensors
    if cache.hidden is None or d_hidden.shape != cache.hidden.shape:
        raise ValueError("d_hidden does not match the cached forward pass")
    if len(cache.blocks) != cfg.L:
        raise ValueError("cache was produced by a model with a different depth")
    g: dict[str, np.ndarray] = {}
    dx, g["final_ln.scale"], g["final_ln.shift"] = layernorm_backward(
        d_hidden, cache.final_ln, t["final_ln.scale"]
    )
    for i in reversed(range(cfg.L)):
        prefix = f"layers.{i}."
        dx, gl = block_backward(layer_view(t, prefix), dx, cache.blocks[i], cfg.A, cfg.norm)
        g.update({prefix + k: v for k, v in gl.items()})
    dx = _apply_mask(dx, cache.emb_mask)
    H = cfg.H
    d_tok = np.zeros_like(t["token_embed"])
    np.add.at(d_tok, cache.ids.reshape(-1), dx.reshape(-1, H))
    d_pos = np.zeros_like(t["pos_embed"])
    np.add.at(d_pos, cache.positions.reshape(-1), dx.reshape(-1, H))
    g["token_embed"] = d_tok
    g["pos_embed"] = d_pos
    return {name: g[name] for name in t if name in g}


def mlm_head_forward(params: Parameters, hidden):
    t = params.tensors
    proj = t["token_embed"].T if params.cfg.tie_mlm_head else t["mlm_proj"]
    return hidden @ proj + t["mlm_bias"]


def forward(
    params: Parameters,
    batch,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    replay: list | None = None,
) -> tuple[np.ndarray, ActivationCache]:
    """MLM logits [B, T, V] for a MaskedBatch (or anything with the same fields)."""
    hidden, cache = encoder_forward(
        params, batch.inputs, batch.attention_mask, batch.positions, mode, rng, replay
    )
    logits = mlm_head_forward(params, hidden)
    cache.logits_shape = logits.shape
    return logits, cache


def backward(params: Parameters, cache: ActivationCache, d_logits) -> dict[str, np.ndarray]:
    if cache.logits_shape is None or d_logits.shape != cache.logits_shape:
        raise ValueError(f"d_logits shape {d_logits.shape} does not match the cached logits")
    t = params.tensors
    hidden = cache.hidden
    head = {"mlm_bias": d_logits.sum((0, 1))}
    if params.cfg.tie_mlm_head:
        d_hidden = d_logits @ t["token_embed"]
        d_embed_head = _flat_grad(d_logits, hidden)  # [V, H]
    else:
        d_hidden = d_logits @ t["mlm_proj"].T
        head["mlm_proj"] = _flat_grad(hidden, d_logits)
        d_embed_head = None
    grads = encoder_backward(params, cache, d_hidden)
    if d_embed_head is not None:
        grads["token_embed"] = grads["token_embed"] + d_embed_head
    grads.update(head)
    return {name: grads[name] for name in t}


def mlm_loss(logits, labels, ignore: int = -1, reduction: str = "mean"):
    """Cross-entropy over labelled positions and its gradient w.r.t. logits.

    ``reduction="sum"`` returns the summed loss and un-normalized gradient,
    which lets callers normalize across several micro-batches.
    """
    labels = np.asarray(labels)
    sel = labels != ignore
    n = int(sel.sum())
    if n == 0:
        raise ValueError("no labelled positions")
    z = logits[sel]
    y = labels[sel]
    m = z.max(-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(-1))
    losses = lse - z[np.arange(n), y]
    probs = np.exp(z - lse[:, None])
    probs[np.arange(n), y] -= 1.0
    d = np.zeros_like(logits)
    if reduction == "mean":
        d[sel] = probs / n
        return float(losses.sum() / n), d
    if reduction == "sum":
        d[sel] = probs
        return float(losses.sum()), d
    raise ValueError("reduction must be 'mean' or 'sum'")


def encode_tokens(params: Parameters, ids: Sequence[int], layer: int | None = None) -> np.ndarray:
    """Eval-mode hidden states [T, H] for one sequence.

    ``layer=None`` gives the final normalized states; an int indexes the
    raw block outputs (0 = embeddings, -1 = last block before the final norm).
    """
    hidden, cache = encoder_forward(params, np.asarray(ids, dtype=np.int64)[None, :])
    if layer is None:
        return hidden[0]
    return cache.layer_outputs[layer][0]


def replay_forward(params: Parameters, batch, cache: ActivationCache) -> np.ndarray:
    logits, _ = forward(params, batch, cache.mode, replay=cache.dropout_masks)
    return logits
