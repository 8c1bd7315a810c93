"""
Binary checkpoints of model parameters and Adam state.

Layout (little-endian):
    magic "MXBT" | u32 version | 32-byte sha256 of the architecture | u32 epoch |
    u32 encoder depth | u32 parameter count P | u64 optimizer step |
    3·P tensors (parameters, first moments, second moments), each as
    u32 rank | rank × u64 extents | f64 payload
"""
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, List, Optional

import numpy as np

from mixbt.core.exceptions import CheckpointFormatError, CheckpointMismatchError, DimensionError
from mixbt.core.logging_config import get_logger
from mixbt.services.model import ModelParams
from mixbt.services.optim import OptimState
from mixbt.utils.diffcore import Tensor

logger = get_logger(__name__)

MAGIC = b"MXBT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI32sIIIQ")


@dataclass
class Checkpoint:
    params: ModelParams
    state: OptimState
    epoch: int


def architecture_hash(architecture: dict) -> bytes:
    return hashlib.sha256(json.dumps(architecture, sort_keys=True).encode("utf-8")).digest()


def _write_array(f: BinaryIO, array: np.ndarray) -> None:
    f.write(struct.pack("<I", array.ndim))
    if array.ndim:
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def save_checkpoint(path: str, params: ModelParams, state: OptimState, epoch: int) -> None:
    tensors = params.tensors
    if len(state.m) != len(tensors) or len(state.v) != len(tensors):
        raise DimensionError("save_checkpoint", "optimizer state does not mirror the parameters")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, architecture_hash(params.architecture()),
                             epoch, params.encoder_depth, len(tensors), state.step))
        for array in [t.data for t in tensors] + list(state.m) + list(state.v):
            _write_array(f, np.asarray(array))
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint {path} (epoch {epoch}, step {state.step})")


class _Reader:
    def __init__(self, path: str, raw: bytes):
        self.path = path
        self.raw = raw
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise CheckpointFormatError(self.path, f"truncated at byte {self.offset} (needed {size} more)")
        chunk = self.raw[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def array(self) -> np.ndarray:
        (rank,) = struct.unpack("<I", self.take(4))
        if rank > 8:
            raise CheckpointFormatError(self.path, f"implausible tensor rank {rank}")
        shape = struct.unpack(f"<{rank}Q", self.take(8 * rank)) if rank else ()
        count = int(np.prod(shape)) if rank else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path: str, expected_architecture: Optional[dict] = None) -> Checkpoint:
    """
    Read a checkpoint written by `save_checkpoint`; values round-trip bit for bit.

    Raises:
        CheckpointFormatError: missing or truncated file, wrong magic or version.
        CheckpointMismatchError: the stored architecture differs from `expected_architecture`.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointFormatError(path, f"cannot read file ({e})") from e
    reader = _Reader(path, raw)
    magic, version, arch_hash, epoch, depth, count, step = _HEADER.unpack(reader.take(_HEADER.size))
    if magic != MAGIC:
        raise CheckpointFormatError(path, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(path, f"unsupported format version {version}")
    if expected_architecture is not None and arch_hash != architecture_hash(expected_architecture):
        raise CheckpointMismatchError(path, f"architecture differs from the requested {expected_architecture}")

    arrays: List[np.ndarray] = [reader.array() for _ in range(3 * count)]
    if reader.offset != len(raw):
        raise CheckpointFormatError(path, f"{len(raw) - reader.offset} trailing bytes")
    try:
        params = ModelParams.from_tensors(
            [Tensor(a, requires_grad=True) for a in arrays[:count]], encoder_depth=depth
        )
    except DimensionError as e:
        raise CheckpointFormatError(path, e.message) from e
    if architecture_hash(params.architecture()) != arch_hash:
        raise CheckpointFormatError(path, "stored tensors do not match the header's architecture hash")
    state = OptimState(m=arrays[count:2 * count], v=arrays[2 * count:], step=step)
    return Checkpoint(params=params, state=state, epoch=epoch)
