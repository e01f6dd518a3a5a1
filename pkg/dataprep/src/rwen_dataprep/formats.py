"""Writers/readers for the interchange formats this exporter emits.

Implements the spec in the consumer's docs/formats.md: little-endian `.rwt`
tensor files (magic RWT1, u32 ndim, u32 dims, float32 payload) and a
JSON-lines manifest with sorted keys and compact separators, so identical
exports are byte-identical. Files are written atomically (temp + rename).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"RWT1"
MANIFEST_NAME = "manifest.jsonl"


class FormatError(ValueError):
    pass


def write_tensor(path, values) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + arr.tobytes())
    os.replace(tmp, path)
    return path


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    if ndim > 8:
        raise FormatError(f"{path}: implausible ndim {ndim}")
    if len(blob) < 8 + 4 * ndim:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    payload = blob[8 + 4 * ndim:]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, dims {dims} need "
            f"{4 * count}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(
        np.float32, copy=True
    )


def manifest_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False)


def write_manifest(lines: list[str], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_NAME
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    os.replace(tmp, path)
    return path
