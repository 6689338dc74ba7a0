import struct

import numpy as np
import pytest

from mlmkit.checkpoint import CheckpointError, load_checkpoint, read_tensors, save_checkpoint, write_tensors
from mlmkit.transformer import ModelConfig, init_parameters

CFG = ModelConfig(L=1, H=8, A=2, vocab_size=20, max_positions=8)


def test_round_trip_is_bit_exact(tmp_path):
    params = init_parameters(CFG, 3, dtype=np.float32)
    path = tmp_path / "m.mlmf"
    save_checkpoint(path, params, vocab_hash="abc", step=7)
    loaded, header = load_checkpoint(path)
    assert loaded.cfg == CFG
    assert header["vocab_hash"] == "abc" and header["step"] == 7
    for name, t in params.tensors.items():
        assert loaded.tensors[name].tobytes() == t.tobytes()


def test_float64_parameters_are_stored_as_float32(tmp_path):
    params = init_parameters(CFG, 3)
    save_checkpoint(tmp_path / "m.mlmf", params)
    loaded, _ = load_checkpoint(tmp_path / "m.mlmf")
    for name, t in params.tensors.items():
        assert np.array_equal(loaded.tensors[name], t.astype(np.float32))


def test_bad_magic(tmp_path):
    path = tmp_path / "x.mlmf"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        read_tensors(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "m.mlmf"
    save_checkpoint(path, init_parameters(CFG, 0))
    data = path.read_bytes()
    for cut in (2, 10, len(data) // 2, len(data) - 1):
        path.write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            read_tensors(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.mlmf"
    write_tensors(path, {}, [("a", np.ones(3))])
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CheckpointError):
        read_tensors(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "m.mlmf"
    write_tensors(path, {}, [("a", np.ones(3))])
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        read_tensors(path)


def test_optimizer_file_is_not_a_model(tmp_path):
    path = tmp_path / "s.adam"
    write_tensors(path, {"kind": "adam_state"}, [("m.a", np.zeros(2))])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_inventory_mismatch(tmp_path):
    params = init_parameters(CFG, 0)
    path = tmp_path / "m.mlmf"
    header = {"kind": "model", "model_config": CFG.to_dict()}
    write_tensors(path, header, list(params.tensors.items())[:-1])
    with pytest.raises(CheckpointError, match="inventory"):
        load_checkpoint(path)
