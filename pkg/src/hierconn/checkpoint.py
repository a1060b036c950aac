"""Versioned binary parameter container.

Layout: magic, format version, header length, JSON header (model config,
metadata, tensor index with shapes and offsets), then raw little-endian
float64 payloads. Raw bytes in and out, so round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .model import ModelConfig, ModelParams, init_params

CHECKPOINT_MAGIC = b"HCKP"
CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    config: ModelConfig,
    params: ModelParams,
    meta: dict | None = None,
) -> Path:
    path = Path(path)
    names = params.names()
    tensors = []
    offset = 0
    for name in names:
        arr = params[name].data
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    header = {
        "config": config.to_dict(),
        "meta": meta or {},
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for name in names:
            f.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())
    return path


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ModelParams, dict]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    version, header_len = struct.unpack("<IQ", blob[4:16])
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: corrupt header: {exc}") from exc
    config = ModelConfig(**header["config"])
    params = init_params(config, seed=0)
    payload = blob[16 + header_len :]
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        end = start + size * 8
        if end > len(payload):
            raise ParseError(f"{path}: truncated tensor payload for {spec['name']}")
        arrays[spec["name"]] = (
            np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).astype(np.float64)
        )
    params.load_state_arrays(arrays)
    return config, params, header["meta"]
