"""Binary checkpoint container.

    "DDSR" | u32 version | u32 count
    per tensor: u32 name length | UTF-8 name | u32 rank | u32 extents... | float32 LE data

All integers are little-endian; data is row-major.
"""

from __future__ import annotations

import math
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import FormatError
from .logging import make_component_logger
from .model import DDSRNetParams, ModelConfig, check_params
from .tensor import Array, Parameter

emit_checkpoint_log = make_component_logger("model")

U32 = struct.Struct("<I")
FLOAT32_LE = np.dtype("<f4")


def encode_checkpoint(params: Mapping[str, Parameter]) -> bytes:
    chunks = [CHECKPOINT_MAGIC, U32.pack(CHECKPOINT_VERSION), U32.pack(len(params))]
    for name, param in params.items():
        encoded = name.encode("utf-8")
        chunks.append(U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(U32.pack(param.ndim))
        chunks.extend(U32.pack(extent) for extent in param.shape)
        chunks.append(np.ascontiguousarray(param.data, dtype=FLOAT32_LE).tobytes())
    return b"".join(chunks)


def save_checkpoint(params: Mapping[str, Parameter], path: Path) -> None:
    payload = encode_checkpoint(params)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + ".tmp")
    _ = staging.write_bytes(payload)
    _ = staging.replace(path)
    emit_checkpoint_log("checkpoint.save", path=str(path), tensors=len(params), bytes=len(payload))


class CheckpointReader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        end = self.offset + size
        if end > len(self.payload):
            raise FormatError(
                f"checkpoint truncated while reading {what} "
                f"(need {size} bytes at offset {self.offset}, "
                f"have {len(self.payload) - self.offset})"
            )
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def u32(self, what: str) -> int:
        return int(U32.unpack(self.take(U32.size, what))[0])


def decode_checkpoint(payload: bytes) -> dict[str, Array]:
    """Parse every tensor before returning, so a bad file yields no partial result."""
    reader = CheckpointReader(payload)
    magic = reader.take(len(CHECKPOINT_MAGIC), "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"not a checkpoint: magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    count = reader.u32("tensor count")

    tensors: dict[str, Array] = {}
    for index in range(count):
        name_length = reader.u32(f"name length of tensor {index}")
        try:
            name = reader.take(name_length, f"name of tensor {index}").decode("utf-8")
        except UnicodeDecodeError as error:
            raise FormatError(f"tensor {index} has an invalid UTF-8 name") from error
        if name in tensors:
            raise FormatError(f"duplicate tensor {name} in checkpoint")
        rank = reader.u32(f"rank of {name}")
        shape = tuple(reader.u32(f"extent of {name}") for _ in range(rank))
        nbytes = math.prod(shape) * FLOAT32_LE.itemsize
        if nbytes > len(payload) - reader.offset:
            raise FormatError(
                f"tensor {name} claims shape {shape} ({nbytes} bytes) but only "
                f"{len(payload) - reader.offset} bytes remain"
            )
        raw = reader.take(nbytes, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype=FLOAT32_LE).astype(np.float32).reshape(shape)
    if reader.offset != len(payload):
        raise FormatError(f"checkpoint has {len(payload) - reader.offset} trailing bytes")
    return tensors


def load_checkpoint(path: Path, config: ModelConfig | None = None) -> DDSRNetParams:
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    tensors = decode_checkpoint(path.read_bytes())
    params = DDSRNetParams({name: Parameter(name, value) for name, value in tensors.items()})
    if config is not None:
        check_params(params, config)
    emit_checkpoint_log("checkpoint.load", path=str(path), tensors=len(params))
    return params
