"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic      8 bytes  b"CTCMIXCK"
    version    u32
    digest     32 bytes sha256 of the network config JSON
    config     u32 length + UTF-8 JSON
    count      u32 number of tensors
    per tensor: u32 name length, UTF-8 name, u32 rank, rank x u64 dims,
                raw little-endian float64 values
"""
from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from ..errors import MalformedCheckpoint
from .network import GatedConvRecognizer, NetworkConfig

MAGIC = b"CTCMIXCK"
VERSION = 1


def dumps(model: GatedConvRecognizer) -> bytes:
    buf = io.BytesIO()
    cfg = model.config.to_json().encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(model.config.digest())
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(model.params)))
    for name, tensor in model.params.items():
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(tensor.data, dtype="<f8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        buf.write(data.tobytes())
    return buf.getvalue()


def save(model: GatedConvRecognizer, path) -> Path:
    """Write atomically: a crash never leaves a truncated file at ``path``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(model))
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob, self.pos, self.source = blob, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise MalformedCheckpoint(f"{self.source}: truncated at byte {self.pos} (wanted {n} more)")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def loads(blob: bytes, source: str = "<bytes>") -> GatedConvRecognizer:
    r = _Reader(blob, source)
    if r.take(8) != MAGIC:
        raise MalformedCheckpoint(f"{source}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise MalformedCheckpoint(f"{source}: unsupported version {version}")
    digest = r.take(32)
    config = NetworkConfig.from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    if config.digest() != digest:
        raise MalformedCheckpoint(f"{source}: config digest mismatch")
    state: Dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        n = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(blob):
        raise MalformedCheckpoint(f"{source}: {len(blob) - r.pos} trailing bytes")
    model = GatedConvRecognizer(config, seed=0)
    model.load_state_dict(state)
    return model


def load(path) -> GatedConvRecognizer:
    """Load a checkpoint, following a ``best.ckpt``-style marker file if given one."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(MAGIC):
        target = blob.decode("utf-8", errors="replace").strip()
        if target and "\n" not in target and (path.parent / target).is_file():
            return load(path.parent / target)
    return loads(blob, str(path))
