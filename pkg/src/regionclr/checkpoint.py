"""Versioned binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"LRCK"
    version u32      currently 1
    count   u32      number of parameter entries
    entry*  u32 name length, name bytes (utf-8),
            u32 rank, u32 dims[rank],
            float64-LE payload (row-major)
    tail    u32 snapshot length, snapshot bytes (utf-8)

The snapshot is the resolved run config in ``key = value`` form plus a
``step`` line, so a checkpoint is self-describing: the stored seed and step
are enough to resume the deterministic batch stream. Saving is atomic and
byte-stable: save, load, save produces identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config_text
from .errors import ConfigError
from .fileio import write_bytes_atomic
from .params import ParamStore

MAGIC = b"LRCK"
VERSION = 1


@dataclass
class CheckpointData:
    version: int
    values: dict[str, np.ndarray]
    config: RunConfig
    step: int


def serialize(store: ParamStore, cfg: RunConfig, step: int) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(store))]
    for name, tensor in store.items():
        encoded = name.encode("utf-8")
        arr = tensor.data
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    snapshot = (cfg.to_text() + f"step = {step}\n").encode("utf-8")
    chunks.append(struct.pack("<I", len(snapshot)))
    chunks.append(snapshot)
    return b"".join(chunks)


def save_checkpoint(path, store: ParamStore, cfg: RunConfig, step: int) -> None:
    write_bytes_atomic(path, serialize(store, cfg, step))


class _Reader:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.source = source
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.payload):
            raise ConfigError(f"{self.source}: truncated checkpoint")
        chunk = self.payload[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> CheckpointData:
    payload = Path(path).read_bytes()
    reader = _Reader(payload, str(path))
    if reader.take(4) != MAGIC:
        raise ConfigError(f"{path}: not a checkpoint (bad magic)")
    version = reader.u32()
    if version != VERSION:
        raise ConfigError(
            f"{path}: incompatible checkpoint version {version}, "
            f"this build reads version {VERSION}"
        )
    count = reader.u32()
    values: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank)) if rank else ()
        n_items = int(np.prod(dims)) if dims else 1
        raw = reader.take(8 * n_items)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
        if name in values:
            raise ConfigError(f"{path}: duplicate parameter {name!r}")
        values[name] = arr
    snapshot = reader.take(reader.u32()).decode("utf-8")
    if reader.offset != len(payload):
        raise ConfigError(f"{path}: trailing bytes after checkpoint")
    mapping = parse_config_text(snapshot, source=f"{path}[snapshot]")
    step = int(mapping.pop("step", "0"))
    cfg = RunConfig.from_mapping(mapping)
    return CheckpointData(version=version, values=values, config=cfg, step=step)
