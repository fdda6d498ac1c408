"""Tensor file formats: PFM for 2-D slices and a named-tensor checkpoint container.

Container layout (all little-endian)::

    magic     8 bytes  b"BXSGTNSR"
    version   uint32   1
    count     uint32
    entries   count x { name_len uint32, name utf-8,
                        ndim uint32, shape ndim x uint64,
                        data prod(shape) x float64 }
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"BXSGTNSR"
VERSION = 1


class FormatError(ValueError):
    pass


def write_pfm(path, array: np.ndarray) -> None:
    """Write a 2-D array as a greyscale little-endian PFM (rows stored bottom-up)."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim != 2:
        raise ValueError(f"PFM holds 2-D slices, got shape {a.shape}")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise FormatError(f"{path}: not a PFM file")
        if header == b"PF":
            raise FormatError(f"{path}: colour PFM not supported")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = fh.read()
    if len(raw) != 4 * w * h:
        raise FormatError(f"{path}: expected {4 * w * h} data bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(h, w)[::-1].astype(np.float64)


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named arrays in the order given."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(getattr(arr, "data", arr), dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)))
        parts.append(key)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic, not a tensor container")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(buf):
                raise FormatError(f"{path}: truncated entry {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated container") from exc
    return out
