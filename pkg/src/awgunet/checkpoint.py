"""Binary checkpoint format for model parameters and optimizer state.

Layout (all integers little-endian, all payloads raw little-endian
float32, exactly as documented in docs/checkpoint-format.md):

    magic           4 bytes  b"AWGU"
    format_version  u32
    config_len      u32
    config_text     config_len bytes of UTF-8 "key = value" lines
    tensor_count    u32
    per tensor (in ParameterStore registration order):
        name_len    u16
        name        name_len bytes of UTF-8
        rank        u8
        dims        rank * u32
        payload     prod(dims) * f32
    has_optimizer   u8 (0 or 1)
    if 1:
        step        u64
        per tensor, same order: Adam m payload then v payload (f32)

Loading rebuilds the model from the embedded config and requires the
stored tensor names to match the rebuilt ParameterStore exactly: no
extras, none missing, shapes equal.  A save/load round trip is
bit-identical because parameters are stored in their native float32.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError
from .model import ModelConfig, ModelGraph, build_model
from .optim import ParameterStore

MAGIC = b"AWGU"
FORMAT_VERSION = 1


@dataclass
class CheckpointData:
    """A loaded (or about-to-be-saved) snapshot of a model."""

    config: ModelConfig
    store: ParameterStore
    graph: ModelGraph
    step: int | None = None  # optimizer step count, when state was saved


def _parse_config_text(text: str) -> ModelConfig:
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(
                f"embedded config line {lineno} is not 'key = value': {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return ModelConfig.from_mapping(mapping)


def save_checkpoint(path, config: ModelConfig, store: ParameterStore,
                    step: int | None = None,
                    include_optimizer: bool = False) -> None:
    """Write the store's tensors (optionally with Adam state) to ``path``."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    config_bytes = config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(config_bytes)))
    buf.write(config_bytes)
    names = store.names()
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        data = store[name].data
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", data.ndim))
        buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
        buf.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    if include_optimizer:
        buf.write(struct.pack("<B", 1))
        buf.write(struct.pack("<Q", 0 if step is None else int(step)))
        for name in names:
            entry = store.entry(name)
            buf.write(np.ascontiguousarray(entry.m, dtype="<f4").tobytes())
            buf.write(np.ascontiguousarray(entry.v, dtype="<f4").tobytes())
    else:
        buf.write(struct.pack("<B", 0))
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> CheckpointData:
    """Read a checkpoint, rebuild its model, and validate the tensor set."""
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {version} "
            f"(expected {FORMAT_VERSION})")
    (config_len,) = reader.unpack("<I")
    config = _parse_config_text(reader.take(config_len).decode("utf-8"))

    (count,) = reader.unpack("<I")
    loaded: dict[str, np.ndarray] = {}
    order: list[str] = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        n_elem = int(np.prod(dims)) if dims else 1
        payload = reader.take(n_elem * 4)
        loaded[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        order.append(name)

    store, graph = build_model(config)
    expected = set(store.names())
    got = set(order)
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise CheckpointError(
            f"{path}: tensor names do not match the config's parameter set "
            f"(missing: {missing[:5]}{'...' if len(missing) > 5 else ''}, "
            f"extra: {extra[:5]}{'...' if len(extra) > 5 else ''})")
    for name, arr in loaded.items():
        tensor = store[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {arr.shape}, "
                f"config expects {tensor.shape}")
        tensor.data = arr.astype(np.float32, copy=False)

    (has_opt,) = reader.unpack("<B")
    step = None
    if has_opt:
        (raw_step,) = reader.unpack("<Q")
        step = int(raw_step)
        for name in order:
            entry = store.entry(name)
            n = entry.tensor.size * 4
            entry.m = np.frombuffer(reader.take(n), dtype="<f4").reshape(
                entry.tensor.shape).copy()
            entry.v = np.frombuffer(reader.take(n), dtype="<f4").reshape(
                entry.tensor.shape).copy()
    if reader.pos != len(reader.blob):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return CheckpointData(config=config, store=store, graph=graph, step=step)
