"""Binary model checkpoints with a JSON manifest and raw float payload.

Layout: magic bytes, an 8-byte little-endian manifest length, the UTF-8
JSON manifest, then each parameter's float64 data little-endian in manifest
order.  Values survive a save/load cycle bit for bit.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .model import Model

MAGIC = b"KGCMP\x01"


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def save_checkpoint(path: str, model: Model, extra: dict | None = None) -> None:
    """Write the model's parameters and hyperparameters to `path`.

    `extra` rides along in the manifest and must be JSON-serializable; use
    it for optimizer-agnostic trivia such as the training stage or seed.
    """
    named = model.named_parameters()
    manifest = {
        "format": 1,
        "hyperparams": model.hyperparams(),
        "extra": extra or {},
        "params": [{"name": name, "shape": list(p.shape)}
                   for name, p in named.items()],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in named.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_manifest(path: str) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (length,) = struct.unpack("<Q", fh.read(8))
        blob = fh.read(length)
        if len(blob) != length:
            raise CheckpointError(f"{path}: truncated manifest")
        return json.loads(blob.decode("utf-8"))


def load_checkpoint(path: str) -> tuple[Model, dict]:
    """Rebuild the model from `path`; returns (model, extra manifest dict)."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (length,) = struct.unpack("<Q", fh.read(8))
        blob = fh.read(length)
        if len(blob) != length:
            raise CheckpointError(f"{path}: truncated manifest")
        manifest = json.loads(blob.decode("utf-8"))
        if manifest.get("format") != 1:
            raise CheckpointError(f"{path}: unsupported format {manifest.get('format')}")
        # The rng only shapes the initial values, all of which are about to
        # be overwritten from the payload.
        model = Model.from_hyperparams(np.random.default_rng(0),
                                       manifest["hyperparams"])
        named = model.named_parameters()
        seen = set()
        for entry in manifest["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in named:
                raise CheckpointError(f"{path}: unknown parameter {name!r}")
            param = named[name]
            if param.shape != shape:
                raise CheckpointError(
                    f"{path}: parameter {name!r} has shape {shape}, "
                    f"model expects {param.shape}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated payload at {name!r}")
            param.data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            seen.add(name)
        missing = set(named) - seen
        if missing:
            raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after payload")
    return model, manifest.get("extra", {})
