"""
Binary persistence for student network checkpoints.

File layout (all integers unsigned 32-bit little-endian)::

    b"SGPMLP1"                    magic
    layer count
    (rows, cols) per layer
    weights then bias per layer   float64 little-endian, row-major
    flags byte                    bit 0 = normalize_output
"""
import glob
import logging
import os
import re
import struct
from typing import List, Optional

import numpy as np

from models.mlp_descriptor import MlpDescriptor

logger = logging.getLogger(__name__)

MAGIC = b"SGPMLP1"
CHECKPOINT_SUFFIX = '.sgpmlp'
FLAG_NORMALIZE = 0x01
_FLOAT = np.dtype('<f8')
_CHECKPOINT_NAME = re.compile(r'model_iter_(\d+)\.sgpmlp$')


def encode_checkpoint(model: MlpDescriptor) -> bytes:
    """Serialize ``model`` to the checkpoint byte layout."""
    header = [MAGIC, struct.pack('<I', len(model.layers))]
    for weight, _ in model.layers:
        header.append(struct.pack('<II', *weight.shape))
    payload = model.flatten().astype(_FLOAT).tobytes()
    flags = FLAG_NORMALIZE if model.normalize_output else 0
    return b''.join(header) + payload + bytes([flags])


def decode_checkpoint(data: bytes, source: str = '<bytes>') -> MlpDescriptor:
    """
    Rebuild a model from checkpoint bytes.

    Raises:
        ValueError: If the magic, sizes or layer chain are inconsistent
    """
    if not data.startswith(MAGIC):
        raise ValueError(f"{source}: not a model checkpoint (bad magic)")
    offset = len(MAGIC)
    try:
        (count,) = struct.unpack_from('<I', data, offset)
        offset += 4
        shapes = []
        for _ in range(count):
            shapes.append(struct.unpack_from('<II', data, offset))
            offset += 8
    except struct.error:
        raise ValueError(f"{source}: checkpoint header is truncated")
    if count == 0:
        raise ValueError(f"{source}: checkpoint holds no layers")

    total = sum(rows * cols + rows for rows, cols in shapes)
    expected = offset + total * _FLOAT.itemsize + 1
    if len(data) != expected:
        raise ValueError(f"{source}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype=_FLOAT, count=total, offset=offset).astype(np.float64)
    flags = data[-1]
    if flags & ~FLAG_NORMALIZE:
        raise ValueError(f"{source}: unknown flag bits {flags:#04x}")

    layers = []
    cursor = 0
    for rows, cols in shapes:
        weight = flat[cursor:cursor + rows * cols].reshape(rows, cols)
        cursor += rows * cols
        bias = flat[cursor:cursor + rows]
        cursor += rows
        layers.append((weight, bias))
    return MlpDescriptor(layers, normalize_output=bool(flags & FLAG_NORMALIZE))


def write_checkpoint(model: MlpDescriptor, path: str) -> None:
    """
    Write ``model`` atomically (temporary file, then rename).

    Raises:
        PermissionError: If the file cannot be written due to permissions
        OSError: If disk space is insufficient or another I/O error occurs
    """
    temp_path = f"{path}.tmp"
    try:
        with open(temp_path, 'wb') as f:
            f.write(encode_checkpoint(model))
        os.replace(temp_path, path)
    except PermissionError:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise PermissionError(f"Cannot save checkpoint {path}, check file permissions")
    except OSError as e:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        if "No space left on device" in str(e):
            raise OSError(f"Insufficient disk space for checkpoint {path}")
        raise OSError(f"Error saving checkpoint {path}: {e}")


def read_checkpoint(path: str) -> MlpDescriptor:
    """
    Load a checkpoint written by ``write_checkpoint``.

    Raises:
        ValueError: If the file is corrupted
        OSError: If the file cannot be read
    """
    with open(path, 'rb') as f:
        data = f.read()
    return decode_checkpoint(data, source=path)


class CheckpointStorage:
    """Per-iteration checkpoints inside a run directory."""

    def __init__(self, directory: str):
        self.directory = directory

    def path_for(self, iteration: int) -> str:
        return os.path.join(self.directory, f"model_iter_{iteration:02d}{CHECKPOINT_SUFFIX}")

    def save(self, model: MlpDescriptor, iteration: int) -> str:
        """Write the model of ``iteration`` and return its path."""
        os.makedirs(self.directory, exist_ok=True)
        path = self.path_for(iteration)
        write_checkpoint(model, path)
        logger.debug("Saved checkpoint %s (%d parameters)", path, model.parameter_count())
        return path

    def load(self, iteration: int) -> MlpDescriptor:
        return read_checkpoint(self.path_for(iteration))

    def iterations(self) -> List[int]:
        """Iterations with a checkpoint on disk, ascending."""
        found = []
        for path in glob.glob(os.path.join(self.directory, f"model_iter_*{CHECKPOINT_SUFFIX}")):
            match = _CHECKPOINT_NAME.search(os.path.basename(path))
            if match:
                found.append(int(match.group(1)))
        return sorted(found)

    def latest(self) -> Optional[MlpDescriptor]:
        """Checkpoint of the highest iteration, or None for an empty directory."""
        available = self.iterations()
        return self.load(available[-1]) if available else None
