"""
Binary checkpoint format for named float32 tensors.

Layout (little-endian):
    magic      8 bytes  b"V2XPNPCK"
    version    uint32
    count      uint32
    per tensor:
        name_len uint32, name utf-8
        ndim     uint32, dims uint32 * ndim
        data     float32 * prod(dims)
"""

import logging
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from v2xpnp_desk.numcore.tensor import Tensor
from v2xpnp_desk.shared.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from v2xpnp_desk.shared.errors import CheckpointError
from v2xpnp_desk.shared.utils import atomic_write_bytes

logger = logging.getLogger(__name__)


def encode_checkpoint(params: Mapping[str, Tensor | np.ndarray]) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        array = value.data if isinstance(value, Tensor) else np.asarray(value)
        array = np.ascontiguousarray(array, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    """
    Raises:
        CheckpointError: On a bad magic number, unknown version or truncation.
    """
    view = memoryview(blob)
    offset = 0

    def take(size: int) -> memoryview:
        nonlocal offset
        if offset + size > len(view):
            raise CheckpointError(f"checkpoint truncated at byte {offset}")
        chunk = view[offset : offset + size]
        offset += size
        return chunk

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        params[name] = data.astype(np.float32)
    if offset != len(view):
        raise CheckpointError(f"{len(view) - offset} trailing bytes in checkpoint")
    return params


def save_checkpoint(
    params: Mapping[str, Tensor | np.ndarray], path: str | Path
) -> Path:
    path = atomic_write_bytes(path, encode_checkpoint(params))
    logger.info(f"Checkpoint with {len(params)} tensors saved to: {path}")
    return path


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())
