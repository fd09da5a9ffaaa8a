"""Flat binary weight container.

Layout (little endian): 4-byte magic, u32 version, u32 entry count, then per
entry: u16 id length, utf-8 id, u8 ndim, ndim x u32 dims, float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

VERSION = 1


class WeightFormatError(ValueError):
    pass


def dumps(state: dict[str, np.ndarray], magic: bytes) -> bytes:
    out = bytearray(magic + struct.pack("<II", VERSION, len(state)))
    for name, arr in state.items():
        key = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<H", len(key)) + key
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def loads(blob: bytes, magic: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != magic:
        raise WeightFormatError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    if len(blob) < 12:
        raise WeightFormatError("truncated header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise WeightFormatError(f"unsupported weight format version {version}")
    pos = 12
    state = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + klen].decode()
            pos += klen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise WeightFormatError(f"entry {name!r} runs past end of file")
            state[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error as e:
        raise WeightFormatError(f"truncated weight file: {e}") from None
    if pos != len(blob):
        raise WeightFormatError("trailing bytes after last entry")
    return state


def save(path, state: dict[str, np.ndarray], magic: bytes) -> None:
    Path(path).write_bytes(dumps(state, magic))


def load(path, magic: bytes) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes(), magic)
