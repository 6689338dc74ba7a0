"""MLM pretraining: warmup/linear-decay schedule, AdamW, gradient accumulation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from .masking import IGNORE, MaskingConfig, collate, dynamic_mask, row_rng
from .transformer import ModelConfig, Parameters, backward, forward, init_parameters, mlm_loss

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A non-finite loss or gradient; training cannot continue."""


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-6
    weight_decay: float = 0.01
    peak_lr: float = 6e-4
    warmup_steps: int = 24_000
    total_steps: int = 224_000
    accumulation: int = 16
    micro_batch: int = 16
    clip_norm: float = 1.0  # 0 disables clipping
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")
        if self.accumulation < 1 or self.micro_batch < 1:
            raise ValueError("accumulation and micro_batch must be >= 1")
        if self.epsilon <= 0 or self.peak_lr < 0 or self.weight_decay < 0 or self.clip_norm < 0:
            raise ValueError("epsilon > 0 and non-negative peak_lr, weight_decay, clip_norm required")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def effective_batch(self) -> int:
        return self.micro_batch * self.accumulation

    @property
    def schedule(self) -> "LrSchedule":
        return LrSchedule(self.warmup_steps, self.peak_lr, self.total_steps)


@dataclass(frozen=True)
class LrSchedule:
    warmup_steps: int
    peak_lr: float
    total_steps: int
    decay: str = "linear_to_zero"

    def __call__(self, step: int) -> float:
        return lr_at_step(self, step)


def lr_at_step(sched: LrSchedule, step: int) -> float:
    """Linear ramp 0 -> peak over warmup, then linear decay to 0 at total_steps."""
    if not 0 <= step <= sched.total_steps:
        raise ValueError(f"step {step} outside [0, {sched.total_steps}]")
    if sched.decay != "linear_to_zero":
        raise ValueError(f"unknown decay {sched.decay!r}")
    if step < sched.warmup_steps:
        return sched.peak_lr * (step / sched.warmup_steps)
    if sched.total_steps == sched.warmup_steps:
        return sched.peak_lr
    return sched.peak_lr * ((sched.total_steps - step) / (sched.total_steps - sched.warmup_steps))


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(t) for k, t in tensors.items()}, {k: np.zeros_like(t) for k, t in tensors.items()})


def decays(name: str, tensor: np.ndarray) -> bool:
    # Weight matrices only; biases and layernorm vectors are 1-D.
    return tensor.ndim >= 2


def adam_step(
    tensors: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: AdamConfig,
    lr: float,
) -> None:
    """Bias-corrected Adam with decoupled weight decay, in place.

    Only names present in ``grads`` are updated.  Nothing is modified if any
    gradient is non-finite.
    """
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for name, g in grads.items():
        if g.shape != tensors[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {tensors[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name} (max |g| = {np.nanmax(np.abs(g))})")
    state.step += 1
    t = state.step
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = tensors[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        if cfg.weight_decay and decays(name, p):
            update = update + cfg.weight_decay * p
        p -= lr * update


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class MicroBatches:
    """Deterministic micro-batch ``k`` of an endless, per-epoch shuffled stream."""

    def __init__(self, sequences: Sequence[Sequence[int]], micro_batch: int, masking: MaskingConfig,
                 vocab_size: int, seed: int, shuffle: bool = True):
        if not sequences:
            raise ValueError("corpus yields no sequences")
        self.sequences = sequences
        self.micro_batch = micro_batch
        self.masking = masking
        self.vocab_size = vocab_size
        self.seed = seed
        self.shuffle = shuffle
        self.per_epoch = math.ceil(len(sequences) / micro_batch)
        self._orders: dict[int, np.ndarray] = {}

    def order(self, epoch: int) -> np.ndarray:
        if epoch not in self._orders:
            n = len(self.sequences)
            if self.shuffle:
                self._orders = {epoch: np.random.default_rng([self.seed, 0, epoch]).permutation(n)}
            else:
                self._orders = {epoch: np.arange(n)}
        return self._orders[epoch]

    def __getitem__(self, k: int):
        epoch, j = divmod(k, self.per_epoch)
        rows = self.order(epoch)[j * self.micro_batch:(j + 1) * self.micro_batch]
        masked = [
            dynamic_mask(self.sequences[r], self.masking, row_rng(self.masking.seed, epoch, int(r)), self.vocab_size)
            for r in rows
        ]
        return collate(masked)


@dataclass
class TrainResult:
    params: Parameters
    state: AdamState
    curve: list[tuple[int, float, float]] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    effective_batch: int = 0


def save_optimizer_state(path: Path, state: AdamState, extra: dict) -> None:
    tensors = [(f"m.{k}", v) for k, v in state.m.items()] + [(f"v.{k}", v) for k, v in state.v.items()]
    write_tensors(path, {"kind": "adam_state", "step": state.step, **extra}, tensors)


def load_optimizer_state(path: Path) -> tuple[AdamState, dict]:
    header, tensors = read_tensors(path)
    if header.get("kind") != "adam_state":
        raise ValueError(f"{path}: not an optimizer state file")
    m = {k[2:]: v for k, v in tensors.items() if k.startswith("m.")}
    v = {k[2:]: t for k, t in tensors.items() if k.startswith("v.")}
    return AdamState(header["step"], m, v), header


def checkpoint_paths(out_dir: Path, step: int) -> tuple[Path, Path]:
    return out_dir / f"ckpt_{step:07d}.mlmf", out_dir / f"ckpt_{step:07d}.adam"


def train_mlm(
    sequences: Sequence[Sequence[int]],
    model_cfg: ModelConfig,
    adam_cfg: AdamConfig,
    masking_cfg: MaskingConfig,
    seed: int,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    vocab_hash: str = "",
    dtype=np.float32,
    shuffle: bool = True,
    stop_after: int | None = None,
    on_step: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Train the MLM for ``adam_cfg.total_steps`` optimizer updates.

    Each update sums per-token loss gradients over ``accumulation``
    micro-batches and divides by the number of labelled tokens in the
    window.  ``resume`` points at a model checkpoint whose ``.adam``
    sibling holds the optimizer state; training continues from its step.
    ``stop_after`` ends early after that many total updates (used to
    produce resumable partial runs).
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        params, header = load_checkpoint(resume)
        if params.cfg != model_cfg:
            raise ValueError("resume checkpoint was trained with a different model config")
        params = params.astype(dtype)
        state, _ = load_optimizer_state(Path(resume).with_suffix(".adam"))
        state.m = {k: t.astype(dtype) for k, t in state.m.items()}
        state.v = {k: t.astype(dtype) for k, t in state.v.items()}
    else:
        params = init_parameters(model_cfg, seed, dtype=dtype)
        state = AdamState.zeros_like(params.tensors)

    data = MicroBatches(sequences, adam_cfg.micro_batch, masking_cfg, model_cfg.vocab_size, seed, shuffle)
    sched = adam_cfg.schedule
    result = TrainResult(params, state, effective_batch=adam_cfg.effective_batch)
    logger.info(
        "effective batch %d = micro-batch %d x accumulation %d",
        adam_cfg.effective_batch, adam_cfg.micro_batch, adam_cfg.accumulation,
    )
    last = adam_cfg.total_steps if stop_after is None else min(stop_after, adam_cfg.total_steps)
    curve_file = None
    if out is not None:
        curve_path = out / "loss.csv"
        fresh = resume is None or not curve_path.exists()
        curve_file = open(curve_path, "w" if fresh else "a", newline="")
        writer = csv.writer(curve_file, lineterminator="\n")
        if fresh:
            writer.writerow(["step", "lr", "loss"])
    try:
        while state.step < last:
            loss = _one_update(params, state, data, adam_cfg, sched, seed)
            step = state.step
            lr = lr_at_step(sched, step)
            result.curve.append((step, lr, loss))
            if curve_file is not None:
                writer.writerow([step, repr(lr), repr(loss)])
                curve_file.flush()
            if on_step is not None:
                on_step(step, lr, loss)
            if out is not None and (step % adam_cfg.checkpoint_every == 0 or step == last):
                model_path, state_path = checkpoint_paths(out, step)
                save_checkpoint(model_path, params, vocab_hash, step)
                save_optimizer_state(state_path, state, {"seed": seed})
                result.checkpoints.append(model_path)
    finally:
        if curve_file is not None:
            curve_file.close()
    return result


def _one_update(params: Parameters, state: AdamState, data: MicroBatches,
                cfg: AdamConfig, sched: LrSchedule, seed: int) -> float:
    grads = {k: np.zeros_like(t) for k, t in params.tensors.items()}
    loss_sum = 0.0
    n_labels = 0
    for j in range(cfg.accumulation):
        k = state.step * cfg.accumulation + j
        batch = data[k]
        n = int((batch.labels != IGNORE).sum())
        if n == 0:
            continue
        rng = np.random.default_rng([seed, 1, k])
        logits, cache = forward(params, batch, "train", rng=rng)
        loss, d_logits = mlm_loss(logits, batch.labels, reduction="sum")
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite loss at update {state.step + 1}")
        for name, g in backward(params, cache, d_logits).items():
            grads[name] += g
        loss_sum += loss
        n_labels += n
    if n_labels == 0:
        logger.warning("update %d saw no masked tokens; applying a zero gradient", state.step + 1)
    else:
        for g in grads.values():
            g /= n_labels
    if cfg.clip_norm > 0:
        clip_global_norm(grads, cfg.clip_norm)
    adam_step(params.tensors, grads, state, cfg, lr_at_step(sched, state.step + 1))
    return loss_sum / n_labels if n_labels else 0.0


def adam_config_dict(cfg: AdamConfig) -> dict:
    return asdict(cfg)
