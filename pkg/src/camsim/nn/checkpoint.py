"""Flat binary parameter checkpoints.

Layout (all integers little-endian)::

    magic   4 bytes  b"NNCK"
    version u16      1
    count   u32      number of parameters
    then per parameter:
      name_len u16, name (UTF-8), rank u8, dims u32 * rank,
      values float64 * prod(dims), row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DimensionError, FormatError

MAGIC = b"NNCK"
VERSION = 1


def encode_checkpoint(params) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        value = np.asarray(p.value, dtype="<f8")
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    def take(offset, size):
        if offset + size > len(blob):
            raise FormatError(f"checkpoint truncated: need {size} bytes", offset=offset)
        return blob[offset:offset + size], offset + size

    head, pos = take(0, 4)
    if head != MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    raw, pos = take(pos, 6)
    version, count = struct.unpack("<HI", raw)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    out = {}
    for _ in range(count):
        raw, pos = take(pos, 2)
        (name_len,) = struct.unpack("<H", raw)
        name, pos = take(pos, name_len)
        raw, pos = take(pos, 1)
        (rank,) = struct.unpack("<B", raw)
        raw, pos = take(pos, 4 * rank)
        dims = struct.unpack(f"<{rank}I", raw)
        raw, pos = take(pos, 8 * int(np.prod(dims, dtype=np.int64)))
        out[name.decode("utf-8")] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(blob):
        raise FormatError("trailing bytes after last parameter", offset=pos)
    return out


def save_checkpoint(params, path) -> None:
    Path(path).write_bytes(encode_checkpoint(params))


def load_checkpoint(params, path) -> None:
    """Load values saved by :func:`save_checkpoint` into ``params`` by name."""
    values = decode_checkpoint(Path(path).read_bytes())
    for p in params:
        if p.name not in values:
            raise FormatError(f"checkpoint has no parameter {p.name!r}")
        v = values[p.name]
        if v.shape != p.value.shape:
            raise DimensionError(f"{p.name}: checkpoint shape {v.shape} != {p.value.shape}")
        p.value[...] = v
