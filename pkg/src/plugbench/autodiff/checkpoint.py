"""Binary checkpoint format.

Little-endian layout:
  magic "PBCK" | version u32 | tensor count u32 | meta length u32 | meta (utf-8 JSON)
  per tensor: name length u16 | name utf-8 | rank u8 | dims u32 each | f32 values
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"PBCK"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write tensors (converted to f32) plus a JSON metadata blob; atomic."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors)),
             struct.pack("<I", len(meta_bytes)), meta_bytes]
    for name, arr in tensors.items():
        name_b = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (meta_len,) = struct.unpack_from("<I", blob, 12)
    off = 16
    meta = json.loads(blob[off:off + meta_len].decode("utf-8"))
    off += meta_len
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        tensors[name] = arr.copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return tensors, meta
