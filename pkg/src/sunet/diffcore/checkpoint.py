"""Versioned binary checkpoints: "SUNCK1" header + named float64 arrays.

Layout (little-endian):
  magic "SUNCK1" | u32 version | f64 z_max_global | u64 config hash |
  u32 entry count | per entry: u32 name length, utf-8 name, u32 rank,
  u32 dims..., f64 values (C order).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SUNCK1"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def config_hash(config: dict) -> int:
    """Stable 64-bit hash of a JSON-serializable model configuration."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass
class Checkpoint:
    z_max_global: float
    cfg_hash: int
    state: dict[str, np.ndarray]


def save_checkpoint(path, state: dict[str, np.ndarray], z_max_global: float,
                    cfg_hash: int):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Id", VERSION, float(z_max_global)))
        fh.write(struct.pack("<QI", cfg_hash, len(state)))
        for name, arr in state.items():
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            arr = np.asarray(arr, dtype="<f8")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a SUNCK1 checkpoint")
        version, z_max_global = struct.unpack("<Id", fh.read(12))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        cfg_hash, count = struct.unpack("<QI", fh.read(12))
        state: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode()
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            nbytes = 8 * int(np.prod(shape, dtype=np.int64)) if rank else 8
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(f"{path}: truncated entry {name!r}")
            state[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        return Checkpoint(z_max_global=z_max_global, cfg_hash=cfg_hash, state=state)
