"""Binary frame container with a JSON manifest.

``<stem>.bin`` holds raw little-endian arrays back to back; ``<stem>.json``
records, for every array, its dtype, shape and byte offset plus free-form
metadata (seed, scenario_id, infractions, resolved config).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

LOG_VERSION = 1


def write_container(stem, arrays: dict[str, np.ndarray], meta: dict) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, offset = {}, 0
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    tmp_bin = bin_path.with_suffix(".bin.tmp")
    with open(tmp_bin, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
            data = arr.astype(dt, copy=False).tobytes()
            entries[name] = {"dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}
            fh.write(data)
            offset += len(data)
    manifest = {"version": LOG_VERSION, "arrays": entries, "meta": meta}
    tmp_json = json_path.with_suffix(".json.tmp")
    tmp_json.write_text(json.dumps(manifest, sort_keys=True, indent=1))
    os.replace(tmp_bin, bin_path)
    os.replace(tmp_json, json_path)
    return bin_path, json_path


def read_manifest(stem) -> dict:
    manifest = json.loads(Path(stem).with_suffix(".json").read_text())
    if manifest.get("version") != LOG_VERSION:
        raise ValueError(f"unsupported container version {manifest.get('version')!r}")
    return manifest


def read_container(stem, names=None) -> tuple[dict[str, np.ndarray], dict]:
    manifest = read_manifest(stem)
    raw = np.memmap(Path(stem).with_suffix(".bin"), dtype=np.uint8, mode="r") \
        if Path(stem).with_suffix(".bin").stat().st_size else np.zeros(0, np.uint8)
    out = {}
    for name, e in manifest["arrays"].items():
        if names is not None and name not in names:
            continue
        buf = np.asarray(raw[e["offset"]:e["offset"] + e["nbytes"]])
        out[name] = np.frombuffer(buf.tobytes(), dtype=np.dtype(e["dtype"])).reshape(e["shape"])
    return out, manifest["meta"]


class EpisodeLog:
    """Accumulates per-step ego state and controls for one episode."""

    def __init__(self, scenario_id: str, seed: int, variant: int = 0):
        self.scenario_id, self.seed, self.variant = scenario_id, seed, variant
        self.ego: list = []
        self.controls: list = []

    def record(self, ego, control) -> None:
        self.ego.append([ego.x, ego.y, ego.velocity, ego.acceleration, ego.heading])
        self.controls.append(list(control))

    def save(self, stem, infractions=(), extra: dict | None = None):
        meta = {"seed": self.seed, "scenario_id": self.scenario_id, "variant": self.variant,
                "infractions": [i.to_dict() for i in infractions], **(extra or {})}
        arrays = {"ego": np.asarray(self.ego, dtype=np.float64).reshape(-1, 5),
                  "controls": np.asarray(self.controls, dtype=np.float64).reshape(-1, 3)}
        return write_container(stem, arrays, meta)
