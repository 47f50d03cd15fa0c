"""Bit-exact container formats: tensors, named checkpoints, id lists."""

import io
import struct

import numpy as np
import pytest

from coskel import tensorio
from coskel.errors import DataError
from coskel.rng import substream


def test_tensor_roundtrip_lossless_float64(tmp_path):
    rng = substream(0, "io.f64")
    arr = rng.standard_normal((3, 4, 5))
    p = tmp_path / "a.mmct"
    tensorio.write_tensor(p, arr)
    back = tensorio.read_tensor(p)
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)


def test_tensor_roundtrip_lossless_float32(tmp_path):
    rng = substream(0, "io.f32")
    arr = rng.standard_normal((7,)).astype(np.float32)
    p = tmp_path / "a.mmct"
    tensorio.write_tensor(p, arr)
    back = tensorio.read_tensor(p)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_scalar_and_empty_tensors(tmp_path):
    for arr in (np.array(3.5), np.zeros((0, 4))):
        p = tmp_path / "t.mmct"
        tensorio.write_tensor(p, arr)
        back = tensorio.read_tensor(p)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_header_layout_is_stable():
    buf = io.BytesIO()
    tensorio.dump_tensor(np.arange(6, dtype=np.float64).reshape(2, 3), buf)
    raw = buf.getvalue()
    assert raw[:4] == b"MMCT"
    version, dtype_code, rank = struct.unpack_from("<IBB", raw, 4)
    assert (version, dtype_code, rank) == (1, 2, 2)
    dims = struct.unpack_from("<2Q", raw, 10)
    assert dims == (2, 3)
    payload = np.frombuffer(raw[26:], dtype="<f8")
    assert np.array_equal(payload, np.arange(6.0))


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.mmct"
    p.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(DataError, match="magic"):
        tensorio.read_tensor(p)


def test_bad_version_rejected(tmp_path):
    buf = io.BytesIO()
    tensorio.dump_tensor(np.zeros(2), buf)
    raw = bytearray(buf.getvalue())
    raw[4] = 9  # version little-endian low byte
    p = tmp_path / "v.mmct"
    p.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="version"):
        tensorio.read_tensor(p)


def test_truncated_payload_rejected(tmp_path):
    buf = io.BytesIO()
    tensorio.dump_tensor(np.zeros(8), buf)
    p = tmp_path / "t.mmct"
    p.write_bytes(buf.getvalue()[:-4])
    with pytest.raises(DataError, match="truncat"):
        tensorio.read_tensor(p)


def test_unsupported_dtype_rejected():
    with pytest.raises(DataError, match="dtype"):
        tensorio.dump_tensor(np.zeros(3, dtype=np.int32), io.BytesIO())


def test_checkpoint_roundtrip(tmp_path):
    rng = substream(1, "io.ckpt")
    tensors = {
        "block0.w": rng.standard_normal((4, 4)),
        "head.bias": rng.standard_normal(3),
        "meta.scalars": np.array([1.0, 2.0]),
    }
    p = tmp_path / "c.mmck"
    tensorio.write_checkpoint(p, tensors)
    back = tensorio.read_checkpoint(p)
    assert sorted(back) == sorted(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k]), k


def test_checkpoint_write_is_byte_deterministic(tmp_path):
    rng = substream(2, "io.det")
    tensors = {"a": rng.standard_normal(5), "b": rng.standard_normal((2, 2))}
    p1, p2 = tmp_path / "1.mmck", tmp_path / "2.mmck"
    tensorio.write_checkpoint(p1, tensors)
    tensorio.write_checkpoint(p2, dict(reversed(list(tensors.items()))))
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.mmck"
    p.write_bytes(b"MMCT" + b"\x00" * 16)
    with pytest.raises(DataError):
        tensorio.read_checkpoint(p)


def test_id_list_roundtrip(tmp_path):
    ids = ["c0_train000", "c1_test003", "s-with-dash"]
    p = tmp_path / "f.ids"
    tensorio.write_id_list(p, ids)
    assert tensorio.read_id_list(p) == ids


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "out.bin"
    tensorio.atomic_write_bytes(p, b"hello")
    assert p.read_bytes() == b"hello"
    leftovers = [f for f in tmp_path.iterdir() if f != p]
    assert leftovers == []


def test_atomic_write_replaces_existing(tmp_path):
    p = tmp_path / "out.bin"
    p.write_bytes(b"old")
    tensorio.atomic_write_bytes(p, b"new")
    assert p.read_bytes() == b"new"
