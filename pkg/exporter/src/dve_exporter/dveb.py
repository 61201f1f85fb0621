"""Minimal DVEB matrix writer/reader, implementing the published format:
magic "DVEB", version u32 = 1, dtype u8 = 2 (float64), rows u32, cols u32,
then rows * cols little-endian float64 values row-major (17-byte header)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DVEB"
VERSION = 1
DTYPE_FLOAT64 = 2
_HEADER = struct.Struct("<4sIBII")


class DvebError(Exception):
    pass


def write_matrix(m: np.ndarray, path) -> None:
    m = np.ascontiguousarray(np.asarray(m, dtype=np.float64))
    if m.ndim != 2:
        raise DvebError(f"expected a 2-D array, got shape {m.shape}")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT64, rows, cols))
        fh.write(m.astype("<f8", copy=False).tobytes())


def read_matrix(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DvebError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, dtype, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DvebError(f"{path}: bad magic {magic!r}")
    if version != VERSION or dtype != DTYPE_FLOAT64:
        raise DvebError(f"{path}: unsupported version/dtype {version}/{dtype}")
    expected = _HEADER.size + rows * cols * 8
    if len(blob) != expected:
        raise DvebError(f"{path}: expected {expected} bytes, found {len(blob)} (truncated payload)")
    m = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise DvebError(f"{path}: non-finite entries")
    return m.astype(np.float64)
