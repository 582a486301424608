"""Checkpoint files: a small self-describing binary with the model config embedded.

Layout (little-endian)::

    b"TSCK"  u32 version  u32 meta_len  meta (UTF-8 JSON)
    per array, in meta["arrays"] order: raw float64 bytes, row-major

The encoding has no timestamps, so identical states give identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..models import ModelConfig, ModelState, build_model

MAGIC = b"TSCK"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def encode(state: ModelState, extra: dict | None = None) -> bytes:
    arrays = state.arrays()
    meta = {
        "config": state.config.to_dict(),
        "arrays": [[k, list(a.shape)] for k, a in arrays.items()],
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [_HEAD.pack(MAGIC, FORMAT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values()]
    return b"".join(parts)


def decode(data: bytes) -> tuple[ModelState, dict]:
    if len(data) < _HEAD.size:
        raise CheckpointError(f"checkpoint truncated: {len(data)} bytes")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(data[_HEAD.size:_HEAD.size + n])
    offset = _HEAD.size + n
    arrays = {}
    for name, shape in meta["arrays"]:
        size = int(np.prod(shape)) * 8
        if offset + size > len(data):
            raise CheckpointError(f"checkpoint truncated in array {name} at byte {offset}")
        arrays[name] = np.frombuffer(data, "<f8", int(np.prod(shape)), offset).reshape(shape)
        offset += size
    state = build_model(ModelConfig.from_dict(meta["config"]), 0)
    state.load_arrays(arrays)
    return state, meta["extra"]


def save(path, state: ModelState, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(state, extra))
    return path


def load(path) -> tuple[ModelState, dict]:
    return decode(Path(path).read_bytes())
