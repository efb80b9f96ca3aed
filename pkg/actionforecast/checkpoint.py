"""Model checkpoint container.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, UTF-8 JSON header (architecture tag, config, vocabulary hash,
parameter names and shapes), then every parameter array as little-endian
float64 in header order. The header is written with sorted keys, so equal
models give byte-identical files.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .exceptions import ConsistencyError, InputError
from .nn import Params

MAGIC = b"ACTFCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    architecture: str
    config: Dict[str, Any]
    vocabulary_hash: str
    params: Params
    extra: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    header = {
        "architecture": checkpoint.architecture,
        "config": checkpoint.config,
        "vocabulary_hash": checkpoint.vocabulary_hash,
        "extra": checkpoint.extra,
        "params": [
            {"name": name, "shape": list(array.shape)} for name, array in checkpoint.params.items()
        ],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for array in checkpoint.params.values():
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_checkpoint(path, architecture: Optional[str] = None) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise InputError(f"Checkpoint not found: {path}") from None
    except OSError as e:
        raise InputError(f"Failed to read checkpoint {path}: {e}") from None

    if len(blob) < _PREFIX.size:
        raise InputError(f"{path} is too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise InputError(f"{path} is not an actionforecast checkpoint")
    if version != FORMAT_VERSION:
        raise InputError(f"{path} has unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start : start + header_len].decode("utf8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InputError(f"Corrupt checkpoint header in {path}: {e}") from None

    try:
        found = header["architecture"]
        config, vocabulary_hash = header["config"], header["vocabulary_hash"]
        entries = [(entry["name"], tuple(entry["shape"])) for entry in header["params"]]
    except (KeyError, TypeError) as e:
        raise InputError(f"Checkpoint header in {path} is missing field {e}") from None

    if architecture is not None and found != architecture:
        raise ConsistencyError(f"{path} holds a {found} model, expected {architecture}")

    offset = start + header_len
    params = {}
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise InputError(f"Checkpoint {path} is truncated at parameter {name}")
        params[name] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset = end
    if offset != len(blob):
        raise InputError(f"Checkpoint {path} has {len(blob) - offset} trailing bytes")
    return Checkpoint(
        architecture=found,
        config=config,
        vocabulary_hash=vocabulary_hash,
        params=params,
        extra=header.get("extra", {}),
    )


def check_vocabulary(checkpoint: Checkpoint, vocabulary_hash: str, path="checkpoint") -> None:
    if checkpoint.vocabulary_hash != vocabulary_hash:
        raise ConsistencyError(
            f"{path} was trained on a different vocabulary "
            f"({checkpoint.vocabulary_hash[:12]} vs {vocabulary_hash[:12]})"
        )
