"""SLRCKPT1 checkpoints: a flat sequence of named float32 tensors.

Layout (integers little-endian)::

    b"SLRCKPT1"
    repeated until EOF:
        u32 name_length, UTF-8 name,
        u32 rank, u64 dims[rank],
        f32 payload (row-major, little-endian)
"""
import struct
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError

MAGIC = b"SLRCKPT1"


def save_checkpoint(path, tensors):
    """Write ``tensors`` (name -> array) in insertion order."""
    chunks = [MAGIC]
    for name, arr in tensors.items():
        arr = np.require(np.asarray(arr, dtype="<f4"), requirements="C")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not an SLRCKPT1 file")
    tensors = {}
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        payload = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = payload.astype(np.float32)
    return tensors
