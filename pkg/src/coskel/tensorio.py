"""Bit-exact tensor container and checkpoint file formats.

Single-tensor container (extension ``.mmct``)::

    magic   4 bytes  b"MMCT"
    version u32 LE   = 1
    dtype   u8       1 = float32, 2 = float64
    rank    u8
    dims    rank x u64 LE
    payload product(dims) * itemsize bytes, row-major, little-endian

Checkpoint (extension ``.mmck``) is a named-tensor index over containers::

    magic   4 bytes  b"MMCK"
    version u32 LE   = 1
    count   u32 LE
    entry*  u32 LE name length, name (utf-8),
            u64 LE container length, container bytes (full MMCT record)

All writes go through write-then-rename so partially written files are never
observed under the final name.
"""

from __future__ import annotations

import os
import struct
from io import BytesIO
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import DataError

MAGIC_TENSOR = b"MMCT"
MAGIC_CHECKPOINT = b"MMCK"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR_KIND = {"f4": 1, "f8": 2}


def _dtype_code(arr: np.ndarray) -> int:
    kind = arr.dtype.newbyteorder("<").str.lstrip("<")
    if kind not in _CODE_FOR_KIND:
        raise DataError(f"unsupported tensor dtype {arr.dtype}; use float32 or float64")
    return _CODE_FOR_KIND[kind]


def dump_tensor(arr: np.ndarray, stream: BinaryIO) -> None:
    arr = np.asarray(arr)  # not ascontiguousarray: that would promote rank 0 to rank 1
    code = _dtype_code(arr)
    stream.write(MAGIC_TENSOR)
    stream.write(struct.pack("<I", 1))
    stream.write(struct.pack("<BB", code, arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    stream.write(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())


def load_tensor(stream: BinaryIO, source: str = "<stream>") -> np.ndarray:
    head = stream.read(4)
    if head != MAGIC_TENSOR:
        raise DataError(f"{source}: bad magic {head!r}, expected {MAGIC_TENSOR!r}")
    (version,) = struct.unpack("<I", stream.read(4))
    if version != 1:
        raise DataError(f"{source}: unsupported container version {version}")
    code, rank = struct.unpack("<BB", stream.read(2))
    if code not in _DTYPE_CODES:
        raise DataError(f"{source}: unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", stream.read(8 * rank)) if rank else ()
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise DataError(
            f"{source}: truncated payload, expected {count * dtype.itemsize} bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    buf = BytesIO()
    dump_tensor(arr, buf)
    atomic_write_bytes(path, buf.getvalue())


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"tensor file not found: {path}")
    with open(path, "rb") as fh:
        return load_tensor(fh, source=str(path))


def write_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write a named-tensor checkpoint; entries are sorted by name so the
    same tensors always produce the same bytes."""
    buf = BytesIO()
    buf.write(MAGIC_CHECKPOINT)
    buf.write(struct.pack("<I", 1))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in sorted(tensors.items()):
        blob = BytesIO()
        dump_tensor(arr, blob)
        raw = blob.getvalue()
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    atomic_write_bytes(path, buf.getvalue())


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != MAGIC_CHECKPOINT:
            raise DataError(f"{path}: bad magic {head!r}, expected {MAGIC_CHECKPOINT!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (blob_len,) = struct.unpack("<Q", fh.read(8))
            blob = fh.read(blob_len)
            if len(blob) != blob_len:
                raise DataError(f"{path}: truncated entry for tensor '{name}'")
            out[name] = load_tensor(BytesIO(blob), source=f"{path}:{name}")
        return out


def read_id_list(path: str | Path) -> list[str]:
    """Read a sibling id-list file: one sample id per line, order preserved."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"id list not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip() != ""]


def write_id_list(path: str | Path, ids: list[str]) -> None:
    atomic_write_bytes(path, ("".join(i + "\n" for i in ids)).encode("utf-8"))
