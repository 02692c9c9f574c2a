"""
Binary parameter archive.

Layout::

    magic      8 bytes  b"SEQWMCK\\x00"
    version    uint32   little-endian
    header_len uint32   little-endian
    header     JSON     {"metadata": {...}, "tensors": [{"name", "shape", "offset", "nbytes"}]}
    payload    float64 little-endian arrays, concatenated in manifest order
"""

import json
import os
import struct
from pathlib import Path

import numpy as np

from seqwm.exceptions import CheckpointError, WireFormatError

MAGIC = b"SEQWMCK\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def dumps(arrays: dict[str, np.ndarray], metadata: dict | None = None) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name, array in arrays.items():
        raw = np.ascontiguousarray(array, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(np.shape(array)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"metadata": metadata or {}, "tensors": tensors}, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _PREFIX.size:
        raise WireFormatError("checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise WireFormatError(f"bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise WireFormatError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size + header_len
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireFormatError(f"unreadable checkpoint header: {exc}") from exc
    arrays = {}
    for entry in header["tensors"]:
        begin = start + entry["offset"]
        end = begin + entry["nbytes"]
        if end > len(blob):
            raise WireFormatError(f"tensor {entry['name']} runs past the end of the checkpoint")
        arrays[entry["name"]] = np.frombuffer(blob[begin:end], dtype="<f8").reshape(entry["shape"]).copy()
    return arrays, header["metadata"]


def save(path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> Path:
    """Write the archive atomically: a reader never sees a half-written file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(dumps(arrays, metadata))
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)
    return path


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(blob)
