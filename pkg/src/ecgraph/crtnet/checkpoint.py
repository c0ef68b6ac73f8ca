"""Binary model checkpoints.

Layout (little-endian): b"CRTN", u32 version, u32 config length, config as
UTF-8 JSON, u32 tensor count, then per tensor: u16 name length, UTF-8 name,
u32 ndim, ndim x u32 dims, float32 data in C order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import EcgraphError
from ..records import atomic_write
from .model import ModelConfig

MAGIC = b"CRTN"
VERSION = 1


class CheckpointError(EcgraphError, ValueError):
    pass


def dumps(cfg: ModelConfig, params: dict) -> bytes:
    conf = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(conf)), conf, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a CRTN checkpoint (bad magic)")
    version, conf_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg = ModelConfig.from_dict(json.loads(r.take(conf_len).decode()))
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last tensor")
    return cfg, params


def save_checkpoint(path, cfg: ModelConfig, params: dict) -> Path:
    path = Path(path)
    atomic_write(path, dumps(cfg, params))
    return path


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
