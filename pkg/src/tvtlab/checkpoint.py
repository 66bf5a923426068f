"""Versioned binary container for named float32 parameter tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"TVTL"
    version u32
    meta    u32 length + UTF-8 JSON (agent variant, hyperparameters, ...)
    count   u32
    then per tensor:
    name    u16 length + UTF-8 bytes
    rank    u8
    dims    rank x u32
    payload prod(dims) x f32 little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TVTL"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name!r}")
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        a = np.ascontiguousarray(arr, dtype="<f4")
        blob += struct.pack("<B", a.ndim)
        for d in a.shape:
            blob += struct.pack("<I", d)
        blob += a.tobytes()
    path.write_bytes(bytes(blob))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        chunk = buf[off:off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims).copy()
        arrays[name] = arr
    if off != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    return arrays, meta
