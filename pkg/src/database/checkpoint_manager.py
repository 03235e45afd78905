"""
Checkpoint persistence.

File layout (little-endian):
    magic "MAFW" | version u32 | config length u32 + UTF-8 JSON NetConfig |
    tensor count u32 | per tensor: name length u16 + UTF-8 name, ndim u8,
    extents u32 * ndim, float32 payload (row-major)

Biases and gates are stored with their natural rank (1-D); weights as 4-D.
"""

import io
import logging
import os
import struct
from typing import Dict, List, Tuple

import numpy as np

from src.core.blocks import ScalarGate
from src.core.errors import CheckpointFormatError, ConfigError, DataError
from src.core.model import NetConfig, Network, expected_shapes
from src.core.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"MAFW"
VERSION = 1


def _stored_shape(name: str, tensor: Tensor) -> Tuple[int, ...]:
    if isinstance(tensor, ScalarGate) or name.endswith(".bias"):
        return (tensor.size,)
    return tensor.shape


class CheckpointManager:
    """Reads and writes network checkpoints in the MAFW format"""

    def __init__(self, directory: str = "data/checkpoints"):
        self.directory = directory

    def path_for(self, tag: str) -> str:
        return os.path.join(self.directory, f"{tag}.mafw")

    # ---------------------------------------------------------------- writing

    def encode(self, net: Network) -> bytes:
        if net.is_meta:
            raise DataError("Cannot checkpoint a meta network")
        buffer = io.BytesIO()
        config = net.cfg.to_json().encode("utf-8")
        buffer.write(MAGIC)
        buffer.write(struct.pack("<II", VERSION, len(config)))
        buffer.write(config)
        buffer.write(struct.pack("<I", len(net)))
        for name, tensor in net.named_parameters():
            encoded = name.encode("utf-8")
            shape = _stored_shape(name, tensor)
            buffer.write(struct.pack("<H", len(encoded)))
            buffer.write(encoded)
            buffer.write(struct.pack("<B", len(shape)))
            buffer.write(struct.pack(f"<{len(shape)}I", *shape))
            buffer.write(np.ascontiguousarray(tensor.numpy(), dtype="<f4").tobytes())
        return buffer.getvalue()

    def save_checkpoint(self, net: Network, path: str) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        payload = self.encode(net)
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
        logger.info(f"Saved checkpoint {path} ({len(payload)} bytes, {net.num_params()} params)")
        return path

    # ---------------------------------------------------------------- reading

    def decode(self, payload: bytes) -> Network:
        reader = _Reader(payload)
        if reader.take(4) != MAGIC:
            raise CheckpointFormatError("Bad magic: not a MAFW checkpoint")
        version = reader.unpack("<I")
        if version != VERSION:
            raise CheckpointFormatError(f"Unsupported checkpoint version {version} (expected {VERSION})")
        config_len = reader.unpack("<I")
        try:
            cfg = NetConfig.from_json(reader.take(config_len).decode("utf-8"))
        except (UnicodeDecodeError, ConfigError) as e:
            raise CheckpointFormatError(f"Embedded config is invalid: {e}") from None

        expected = expected_shapes(cfg)
        count = reader.unpack("<I")
        params: Dict[str, Tensor] = {}
        for _ in range(count):
            name_len = reader.unpack("<H")
            try:
                name = reader.take(name_len).decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointFormatError("Tensor name is not UTF-8") from None
            ndim = reader.unpack("<B")
            shape = struct.unpack(f"<{ndim}I", reader.take(4 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(reader.take(4 * size), dtype="<f4").astype(np.float32)
            if name in params:
                raise CheckpointFormatError(f"Duplicate tensor name {name!r}")
            if name not in expected:
                raise CheckpointFormatError(f"Unexpected tensor {name!r} for the embedded config")
            if size != int(np.prod(expected[name])):
                raise CheckpointFormatError(f"Tensor {name!r} has shape {shape}, expected {expected[name]}")
            if name.startswith("lambda0.") or ".lambda." in name:
                params[name] = ScalarGate(float(data[0]), dtype=np.float32)
            else:
                params[name] = Tensor(data.reshape(expected[name]), requires_grad=True, dtype=np.float32)
        if reader.remaining:
            raise CheckpointFormatError(f"{reader.remaining} trailing bytes after the last tensor")
        missing: List[str] = [name for name in expected if name not in params]
        if missing:
            raise CheckpointFormatError(f"Checkpoint lacks {len(missing)} tensors, e.g. {missing[0]}")
        return Network(cfg, {name: params[name] for name in expected})

    def load_checkpoint(self, path: str) -> Network:
        if not os.path.exists(path):
            raise DataError(f"Checkpoint not found: {path}")
        with open(path, "rb") as f:
            payload = f.read()
        net = self.decode(payload)
        logger.info(f"Loaded checkpoint {path}: x{net.cfg.scale}, {net.num_params()} params")
        return net


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.payload) - self.offset

    def take(self, count: int) -> bytes:
        if count > self.remaining:
            raise CheckpointFormatError(f"Truncated checkpoint: needed {count} bytes at offset {self.offset}")
        chunk = self.payload[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def unpack(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def save_checkpoint(net: Network, path: str) -> str:
    return CheckpointManager().save_checkpoint(net, path)


def load_checkpoint(path: str) -> Network:
    return CheckpointManager().load_checkpoint(path)
