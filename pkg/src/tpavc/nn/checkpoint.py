"""Checkpoint container: magic, JSON manifest, little-endian float64 blob.

Layout::

    b"TPAVCKPT" | uint64 LE manifest length | manifest (UTF-8 JSON) | blob

The manifest holds ``format_version``, ``tensors`` (name -> {shape, offset}
with offsets counted in float64 elements) and a free-form ``meta`` mapping.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from tpavc.errors import CompatibilityError

MAGIC = b"TPAVCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    manifest = {"format_version": FORMAT_VERSION, "tensors": {}, "meta": dict(meta or {})}
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest["tensors"][name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.size
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CompatibilityError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(f"unsupported checkpoint version {manifest.get('format_version')}")
    blob = np.frombuffer(raw, dtype="<f8", offset=16 + n)
    tensors = {}
    for name, info in manifest["tensors"].items():
        shape = tuple(info["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = info["offset"]
        tensors[name] = blob[start:start + size].reshape(shape).astype(np.float64)
    return tensors, manifest.get("meta", {})
