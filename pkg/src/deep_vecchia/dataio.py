"""Bit-exact file formats: DVEB binary matrices, CSV fallback, and checkpoints.

DVEB layout (all little-endian): magic "DVEB", version u32, dtype u8
(2 = float64, the only value in v1), rows u32, cols u32, then rows*cols
float64 payload in row-major order.  Header is 17 bytes.

A checkpoint is a directory holding one `meta.json` (UTF-8, sorted keys,
deterministic bytes) plus one sibling `.dveb` file per matrix-valued field.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"DVEB"
FORMAT_VERSION = 1
DTYPE_FLOAT64 = 2
_HEADER = struct.Struct("<4sIBII")
_U32_MAX = 2**32 - 1

CHECKPOINT_VERSION = 1


class DataIOError(Exception):
    """Base class for persistence failures."""


class BadMagicError(DataIOError):
    pass


class UnsupportedVersionError(DataIOError):
    pass


class UnsupportedDtypeError(DataIOError):
    pass


class TruncatedPayloadError(DataIOError):
    pass


class NonFiniteError(DataIOError):
    pass


class CapacityError(DataIOError):
    pass


class SchemaVersionError(DataIOError):
    pass


class MissingSiblingError(DataIOError):
    pass


class ModelHashMismatchError(DataIOError):
    pass


def write_matrix(m: np.ndarray, path) -> None:
    """Write a 2-D float64 array as a DVEB file."""
    m = np.ascontiguousarray(np.asarray(m, dtype=np.float64))
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {m.shape}")
    rows, cols = m.shape
    if rows > _U32_MAX or cols > _U32_MAX:
        raise CapacityError(f"matrix shape {m.shape} exceeds u32 header fields")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_FLOAT64, rows, cols))
        fh.write(m.astype("<f8", copy=False).tobytes())


def _read_csv(path) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return m


def read_matrix(path) -> np.ndarray:
    """Inverse of write_matrix; files ending in .csv are parsed as headerless CSV."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        m = _read_csv(path)
    else:
        blob = path.read_bytes()
        if len(blob) < _HEADER.size:
            raise TruncatedPayloadError(f"{path}: {len(blob)} bytes is shorter than the 17-byte header")
        magic, version, dtype, rows, cols = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"{path}: version {version} unsupported")
        if dtype != DTYPE_FLOAT64:
            raise UnsupportedDtypeError(f"{path}: dtype code {dtype} unsupported")
        expected = _HEADER.size + rows * cols * 8
        if len(blob) != expected:
            raise TruncatedPayloadError(
                f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(blob)}"
            )
        m = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).reshape(rows, cols)
        m = m.astype(np.float64)  # native, writable copy
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{path}: non-finite entries")
    return m


@dataclass
class Checkpoint:
    """JSON-scalar metadata plus named matrix payloads, persisted as a directory."""

    meta: dict
    arrays: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION


def _canonical_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")


def save_checkpoint(c: Checkpoint, path) -> None:
    """Write `<path>/meta.json` plus one `.dveb` per array; repeated saves are byte-identical."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    refs = {}
    for name in sorted(c.arrays):
        if not name.replace("_", "").replace("-", "").replace(".", "").isalnum():
            raise ValueError(f"array key {name!r} is not filesystem-safe")
        fname = f"{name}.dveb"
        write_matrix(c.arrays[name], path / fname)
        refs[name] = fname
    doc = {"format_version": c.format_version, "arrays": refs, "meta": c.meta}
    (path / "meta.json").write_bytes(_canonical_json(doc))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise MissingSiblingError(f"{path}: no meta.json")
    doc = json.loads(meta_path.read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise SchemaVersionError(f"{path}: checkpoint version {version} unsupported")
    arrays = {}
    for name, fname in doc.get("arrays", {}).items():
        fpath = path / fname
        if not fpath.exists():
            raise MissingSiblingError(f"{path}: referenced file {fname} is missing")
        arrays[name] = read_matrix(fpath)
    return Checkpoint(meta=doc["meta"], arrays=arrays, format_version=version)


def as_column(v: np.ndarray) -> np.ndarray:
    """Store a vector as an (n, 1) matrix."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("expected a 1-D vector")
    return v.reshape(-1, 1)


def as_vector(m: np.ndarray) -> np.ndarray:
    if m.ndim != 2 or m.shape[1] != 1:
        raise ValueError(f"expected an (n, 1) matrix, got {m.shape}")
    return m[:, 0].copy()
