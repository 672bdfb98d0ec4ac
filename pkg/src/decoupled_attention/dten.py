"""DTEN binary tensor files and their JSON sidecars.

Layout: b"DTEN", u32 version (1), u8 rank, rank x u32 extents, then the
row-major payload as little-endian float32. Metadata (axis roles, class
names, ...) goes in a sidecar with the same basename and a ``.json`` suffix.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"DTEN"
VERSION = 1
_PAYLOAD = np.dtype("<f4")


def encode(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim > 255:
        raise ValueError("rank too large")
    header = MAGIC + struct.pack("<IB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_PAYLOAD).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 9 or buf[:4] != MAGIC:
        raise DataError("not a DTEN buffer")
    version, rank = struct.unpack_from("<IB", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported DTEN version {version}")
    offset = 9 + 4 * rank
    if len(buf) < offset:
        raise DataError("truncated DTEN header")
    shape = struct.unpack_from(f"<{rank}I", buf, 9)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != offset + 4 * count:
        raise DataError(f"DTEN payload size mismatch for shape {shape}")
    return np.frombuffer(buf, dtype=_PAYLOAD, offset=offset, count=count).reshape(shape).astype(np.float32)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write(path, array, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(array))
    if meta is not None:
        write_json(sidecar_path(path), meta)
    return path


def read(path) -> np.ndarray:
    try:
        return decode(Path(path).read_bytes())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def read_meta(path) -> dict:
    return read_json(sidecar_path(path))


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
