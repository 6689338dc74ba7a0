"""Binary tensor container used for model checkpoints and optimizer state.

Layout (all integers little-endian)::

    b"MLMF"  u32 version  u32 header_len  header (UTF-8 JSON)
    u32 n_tensors
    n_tensors x [ u16 name_len  name  u8 ndim  ndim x u64 dim
                  u64 n_bytes  n_bytes of float32 little-endian ]

Tensors are stored in the order given; for model checkpoints that is the
fixed parameter inventory of ``transformer.param_shapes``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .transformer import ModelConfig, Parameters, param_shapes

MAGIC = b"MLMF"
VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def write_tensors(path: str | Path, header: dict, tensors: Iterable[tuple[str, np.ndarray]]) -> None:
    tensors = list(tensors)
    header = {**header, "tensors": [name for name, _ in tensors]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = np.ascontiguousarray(arr, dtype=_F32)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", raw.ndim))
            f.write(struct.pack(f"<{raw.ndim}Q", *raw.shape))
            f.write(struct.pack("<Q", raw.nbytes))
            f.write(raw.tobytes())
    tmp.replace(path)


def read_tensors(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        version, header_len = struct.unpack("<II", _read_exact(f, 8))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        header = json.loads(_read_exact(f, header_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim))
            (n_bytes,) = struct.unpack("<Q", _read_exact(f, 8))
            if n_bytes != int(np.prod(shape, dtype=np.int64)) * 4:
                raise CheckpointError(f"{path}: tensor {name} size does not match its shape")
            tensors[name] = np.frombuffer(_read_exact(f, n_bytes), dtype=_F32).reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return header, tensors


def save_checkpoint(path: str | Path, params: Parameters, vocab_hash: str = "", step: int = 0, **extra) -> None:
    header = {"kind": "model", "model_config": params.cfg.to_dict(), "vocab_hash": vocab_hash, "step": step, **extra}
    order = [name for name, _ in param_shapes(params.cfg)]
    write_tensors(path, header, ((name, params.tensors[name]) for name in order))


def load_checkpoint(path: str | Path) -> tuple[Parameters, dict]:
    header, tensors = read_tensors(path)
    if header.get("kind") != "model":
        raise CheckpointError(f"{path}: not a model checkpoint")
    cfg = ModelConfig(**header["model_config"])
    expected = [name for name, _ in param_shapes(cfg)]
    if list(tensors) != expected:
        raise CheckpointError(f"{path}: tensor inventory does not match the model config")
    params = Parameters(cfg, tensors)
    params.validate()
    return params, header


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
