"""Checkpoint files: a JSON manifest next to a raw little-endian float64 blob.

``save_checkpoint("run/model.json", ...)`` writes ``run/model.json`` and
``run/model.bin``. Arrays are stored back to back in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "so3kit-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f8")


def _blob_path(path: Path) -> Path:
    return path.with_suffix(".bin")


def save_checkpoint(path, params, optimizer=None, metadata=None):
    """Write parameters (and optional optimizer state) to ``path``."""
    path = Path(path)
    entries, chunks, offset = [], [], 0

    def put(name, array):
        nonlocal offset
        arr = np.ascontiguousarray(array, dtype=_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size

    for p in params:
        put(p.name, p.data)
    opt_meta = None
    if optimizer is not None:
        opt_meta = {}
        for key, value in optimizer.state_dict().items():
            if isinstance(value, dict):
                for name, arr in value.items():
                    put(f"optimizer.{key}/{name}", arr)
            else:
                opt_meta[key] = value
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "float64",
        "byteorder": "little",
        "blob": _blob_path(path).name,
        "tensors": entries,
        "optimizer": opt_meta,
        "metadata": metadata or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    _blob_path(path).write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Return ``(arrays, optimizer_state, metadata)`` from a checkpoint.

    ``arrays`` maps parameter names to arrays; optimizer per-parameter state
    is folded back into nested dicts inside ``optimizer_state``.
    """
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: not a checkpoint manifest")
    if manifest.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
    blob = np.frombuffer((path.parent / manifest["blob"]).read_bytes(), dtype=_DTYPE)
    arrays, opt_state = {}, manifest.get("optimizer")
    for entry in manifest["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        arr = blob[entry["offset"] : entry["offset"] + size].reshape(entry["shape"]).copy()
        name = entry["name"]
        if name.startswith("optimizer."):
            key, pname = name[len("optimizer."):].split("/", 1)
            opt_state.setdefault(key, {})[pname] = arr
        else:
            arrays[name] = arr
    return arrays, opt_state, manifest["metadata"]
