"""Flat binary parameter checkpoints.

Layout (little-endian)::

    magic   4 bytes  b"EMNN"
    version uint32   (1)
    count   uint32   number of parameter arrays
    then per array:
      ndim  uint32
      shape ndim x uint32
      data  prod(shape) x float64, row-major
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMNN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def loads(blob: bytes) -> list[np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a parameter checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 12
    out = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
        off += 8 * n
        out.append(data.reshape(shape).astype(float))
    if off != len(blob):
        raise CheckpointError("trailing bytes after the last array")
    return out


def save(path, module) -> None:
    Path(path).write_bytes(dumps(module.state_arrays()))


def load(path, module) -> None:
    module.load_state_arrays(loads(Path(path).read_bytes()))
