"""Versioned checkpoint file: magic, JSON header, raw little-endian arrays.

Layout: ``b"DMCKPT\\0\\0"`` + uint64 header length + UTF-8 JSON header + array
bytes. The header holds the version, the resolved config, counters, and an
array manifest (dtype, shape, offset). Writes go to a temp file first and are
renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DMCKPT\0\0"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], header: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest, blobs, offset = {}, [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        data = arr.astype(dt, copy=False).tobytes()
        manifest[name] = {"dtype": dt.str, "shape": list(arr.shape), "offset": offset}
        blobs.append(data)
        offset += len(data)
    head = json.dumps({"version": CHECKPOINT_VERSION, **header, "arrays": manifest}, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    os.replace(tmp, path)
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _header(fh, path)[0]


def _header(fh, path):
    if fh.read(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    (n,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(n).decode())
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {header.get('version')!r} != {CHECKPOINT_VERSION}")
    return header, len(MAGIC) + 8 + n


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header, start = _header(fh, path)
        raw = fh.read()
    arrays = {}
    for name, e in header["arrays"].items():
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"])) * dt.itemsize
        arrays[name] = np.frombuffer(raw[e["offset"]:e["offset"] + n], dtype=dt).reshape(e["shape"]).copy()
    return arrays, header
