"""Bit-exact binary checkpoints for named parameter groups.

Layout (all integers little-endian):

    magic                b"CADPT1"
    u32 n + bytes        config echo, UTF-8 JSON
    u32                  group count
    per group:
        u16 n + bytes    group name
        u32              tensor count
        per tensor:
            u16 n + bytes  tensor name
            u8             rank (always 2)
            u32 x rank     dimensions
            raw payload    row-major float32, little-endian
    u32                  CRC32 over all payload bytes, in order

Loading recomputes the CRC and refuses mismatching files.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor

MAGIC = b"CADPT1"


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(path, groups: dict[str, list[tuple[str, Tensor]]],
                    config: dict) -> None:
    chunks = [MAGIC]
    config_raw = json.dumps(config).encode("utf-8")
    chunks.append(struct.pack("<I", len(config_raw)))
    chunks.append(config_raw)
    chunks.append(struct.pack("<I", len(groups)))
    crc = 0
    for group_name, tensors in groups.items():
        chunks.append(_pack_name(group_name))
        chunks.append(struct.pack("<I", len(tensors)))
        for tensor_name, t in tensors:
            chunks.append(_pack_name(tensor_name))
            rows, cols = t.shape
            chunks.append(struct.pack("<BII", 2, rows, cols))
            payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
            crc = zlib.crc32(payload, crc)
            chunks.append(payload)
    chunks.append(struct.pack("<I", crc))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def name(self) -> str:
        return self.take(self.u16()).decode("utf-8")


def load_checkpoint(path) -> tuple[dict, dict[str, list[tuple[str, np.ndarray]]]]:
    """Returns (config echo, {group: [(tensor name, float32 array), ...]})."""
    raw = Path(path).read_bytes()
    reader = _Reader(raw, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    try:
        config = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable config echo") from exc
    groups: dict[str, list[tuple[str, np.ndarray]]] = {}
    crc = 0
    for _ in range(reader.u32()):
        group_name = reader.name()
        tensors = []
        for _ in range(reader.u32()):
            tensor_name = reader.name()
            rank = reader.u8()
            if rank != 2:
                raise CheckpointError(f"{path}: unsupported tensor rank {rank}")
            rows = reader.u32()
            cols = reader.u32()
            payload = reader.take(rows * cols * 4)
            crc = zlib.crc32(payload, crc)
            arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
            tensors.append((tensor_name, arr))
        groups[group_name] = tensors
    stored_crc = reader.u32()
    if reader.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - reader.pos} trailing bytes")
    if stored_crc != crc:
        raise CheckpointError(
            f"{path}: CRC mismatch (stored {stored_crc:#010x}, computed {crc:#010x})")
    return config, groups


def load_into_model(model, path) -> dict:
    """Copy checkpoint parameters into a model with matching structure."""
    config, groups = load_checkpoint(path)
    model_groups = model.parameter_groups()
    if set(groups) != set(model_groups):
        raise CheckpointError(
            f"{path}: group mismatch: file has {sorted(groups)}, "
            f"model has {sorted(model_groups)}")
    for group_name, tensors in model_groups.items():
        stored = dict(groups[group_name])
        for tensor_name, t in tensors:
            if tensor_name not in stored:
                raise CheckpointError(
                    f"{path}: missing tensor {group_name}.{tensor_name}")
            arr = stored[tensor_name]
            if arr.shape != t.shape:
                raise CheckpointError(
                    f"{path}: {group_name}.{tensor_name} has shape {arr.shape}, "
                    f"model expects {t.shape}")
            t.data[...] = arr
    return config
