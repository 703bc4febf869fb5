"""Binary tensor checkpoint format shared by every trainable model.

Layout (all little-endian):

    magic  b"ADXT"
    u32    format version (currently 1)
    u32    tensor count
    per tensor:
        u16  name length, then UTF-8 name
        u8   ndim
        u32  dims[ndim]
        f64  values (C order)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADXT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_tensors(path: str | Path, named: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(named)))
        for name, arr in named.items():
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        end = offset + 8 * n
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor data for '{name}'")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(dims).astype(np.float64)
        offset = end
        out[name] = arr
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return out
