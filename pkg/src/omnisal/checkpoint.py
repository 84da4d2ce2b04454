"""Parameter checkpoints: a JSON manifest next to a raw little-endian blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor


def _paths(path) -> tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".bin")


def save_checkpoint(path, params: dict, meta: dict | None = None) -> Path:
    """Write ``<path>.json`` and ``<path>.bin``; returns the manifest path."""
    manifest_path, blob_path = _paths(path)
    entries = []
    offset = 0
    with open(blob_path, "wb") as fh:
        for name in sorted(params):
            arr = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
            dtype = np.dtype(arr.dtype).newbyteorder("<")
            raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
            fh.write(raw)
            entries.append(
                {"name": name, "shape": list(arr.shape), "dtype": dtype.name,
                 "offset": offset, "nbytes": len(raw)}
            )
            offset += len(raw)
    manifest = {"format": "omnisal-checkpoint-1", "tensors": entries, "meta": meta or {}}
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


def load_checkpoint(path, expected: dict | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; ``expected`` maps names to arrays, Tensors or shape tuples."""
    manifest_path, blob_path = _paths(path)
    manifest = json.loads(manifest_path.read_text())
    blob = blob_path.read_bytes()
    out = {}
    for e in manifest["tensors"]:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        count = int(np.prod(e["shape"], dtype=np.int64))
        if e["nbytes"] != count * dtype.itemsize or e["offset"] + e["nbytes"] > len(blob):
            raise ValueError(f"checkpoint entry {e['name']} is inconsistent with its shape")
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=e["offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(dtype.newbyteorder("="))
    if expected is not None:
        for name, ref in expected.items():
            if name not in out:
                raise ValueError(f"checkpoint lacks parameter {name}")
            shape = ref if isinstance(ref, (tuple, list)) else ref.shape
            if tuple(out[name].shape) != tuple(shape):
                raise ValueError(f"shape mismatch for {name}: {out[name].shape} vs {shape}")
    return out, manifest.get("meta", {})
