"""
Binary checkpoint codec.

Layout (little-endian)::

    b"PCFN"                      magic
    u32                          format version
    u32                          metadata length in bytes
    UTF-8 JSON                   model config, tensor dtype, NormStats, free-form metadata
    tensors                      every registry entry in registry order, flat, at the recorded dtype

32-bit floats are the default element type; 64-bit runs record ``<f8`` so that a saved model
reproduces its predictions bit for bit.
"""
import json
import logging
import struct
from pathlib import Path

import numpy as np

from utils.exceptions import CheckpointError

from .network import ModelConfig, build

logger = logging.getLogger(__name__)

MAGIC = b"PCFN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")
ELEMENT_TYPES = ("<f4", "<f8")


def save_checkpoint(path, params, metadata=None, element_type=None):
    """
    Write ``params`` and metadata to ``path``.

    Args:
        path (str | Path): destination file.
        params (ModelParams): the network to store.
        metadata (dict): JSON-serialisable extras (NormStats, epoch, seed...).
        element_type (str): "<f4" or "<f8"; defaults to "<f8" for 64-bit params, "<f4" otherwise.
    """
    if element_type is None:
        element_type = "<f8" if params.dtype == np.float64 else "<f4"
    if element_type not in ELEMENT_TYPES:
        raise CheckpointError(f"Unsupported checkpoint element type '{element_type}'")
    entries = list(params.items())
    block = {
        "config": params.config.to_dict(),
        "element_type": element_type,
        "tensors": [[key, list(array.shape)] for key, array in entries],
        "metadata": metadata or {},
    }
    encoded = json.dumps(block, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(encoded)))
        handle.write(encoded)
        for _, array in entries:
            handle.write(np.ascontiguousarray(array, dtype=element_type).tobytes())
    logger.info(f"Checkpoint written to {path} ({len(entries)} tensors, {element_type}).")
    return path


def load_checkpoint(path, dtype=None):
    """
    Read a checkpoint written by ``save_checkpoint``.

    Returns:
        tuple: (ModelParams, metadata dict)

    Raises:
        CheckpointError: missing file, wrong magic, unknown version, or a length that does not
            match the recorded tensors.
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"Checkpoint file not found: {path}")
        raise CheckpointError(f"Checkpoint file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, meta_length = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = _HEADER.size
    try:
        block = json.loads(raw[start:start + meta_length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable metadata block ({e})")

    element_type = block.get("element_type", "<f4")
    if element_type not in ELEMENT_TYPES:
        raise CheckpointError(f"{path}: unsupported element type '{element_type}'")
    itemsize = np.dtype(element_type).itemsize
    shapes = [(key, tuple(shape)) for key, shape in block["tensors"]]
    expected = start + meta_length + itemsize * sum(int(np.prod(shape)) for _, shape in shapes)
    if expected != len(raw):
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(raw)}")

    config = ModelConfig.from_dict(block["config"])
    if dtype is None:
        dtype = np.float64 if element_type == "<f8" else np.float32
    params = build(config, seed=0, dtype=dtype)
    registry = [key for key, _ in params.items()]
    if registry != [key for key, _ in shapes]:
        raise CheckpointError(f"{path}: tensor registry does not match the stored configuration")

    offset = start + meta_length
    for key, shape in shapes:
        count = int(np.prod(shape))
        array = np.frombuffer(raw, dtype=element_type, count=count, offset=offset).reshape(shape)
        params.assign(key, array)
        offset += count * itemsize
    params.check_finite()
    logger.info(f"Checkpoint loaded from {path}.")
    return params, block.get("metadata", {})
