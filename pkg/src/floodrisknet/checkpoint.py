"""Binary checkpoint container for named float64 matrices.

Layout (all integers little-endian)::

    magic      8 bytes   b"FRNCKPT\\0"
    version    uint32    currently 1
    count      uint32    number of entries
    per entry:
      name_len uint32
      name     name_len bytes, UTF-8
      rows     uint64
      cols     uint64
      payload  rows*cols float64, little-endian, row-major
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError

MAGIC = b"FRNCKPT\0"
VERSION = 1


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ValueError(f"{name}: only 2-D arrays can be stored")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<QQ", *arr.shape))
        buf.write(np.ascontiguousarray(arr).astype("<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:8] != MAGIC:
        raise SchemaError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<QQ", data, pos)
            pos += 16
            nbytes = 8 * rows * cols
            if pos + nbytes > len(data):
                raise SchemaError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8", count=rows * cols,
                                      offset=pos).astype(np.float64).reshape(rows, cols)
            pos += nbytes
    except struct.error as exc:
        raise SchemaError(f"truncated checkpoint: {exc}") from None
    return out


def save(path, arrays: dict[str, np.ndarray]) -> None:
    from .export import atomic_write_bytes

    atomic_write_bytes(Path(path), dumps(arrays))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
