"""Tensor serialization: single-tensor files and named-tensor checkpoints.

File layout (little-endian throughout):

    magic   8 bytes  b"CFTNSR01"
    rank    u32
    dims    rank * u32
    data    prod(dims) * f32, row-major

A checkpoint is a directory holding ``tensors.bin`` (the records above,
concatenated in sorted name order) and ``index.json`` mapping each name to
its byte offset. float64 tensors are narrowed to float32 on write.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Optional

import numpy as np

from .tensor import Tensor

MAGIC = b"CFTNSR01"
INDEX_NAME = "index.json"
DATA_NAME = "tensors.bin"
SCHEMA_VERSION = 1


class TensorFormatError(ValueError):
    """Raised for bad magic bytes, truncated payloads, or index mismatches."""


def write_tensor(fp: BinaryIO, tensor: Tensor) -> int:
    """Append one record to an open binary stream; returns bytes written."""
    # ascontiguousarray would promote rank-0 to rank-1; asarray keeps it.
    arr = np.asarray(tensor.data, dtype="<f4", order="C")
    dims = arr.shape
    header = MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    payload = arr.tobytes(order="C")
    fp.write(header)
    fp.write(payload)
    return len(header) + len(payload)


def read_tensor(fp: BinaryIO) -> Tensor:
    magic = fp.read(len(MAGIC))
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    raw = fp.read(4)
    if len(raw) != 4:
        raise TensorFormatError("truncated header: missing rank")
    (rank,) = struct.unpack("<I", raw)
    raw = fp.read(4 * rank)
    if len(raw) != 4 * rank:
        raise TensorFormatError(f"truncated header: expected {rank} dims")
    dims = struct.unpack(f"<{rank}I", raw) if rank else ()
    count = 1
    for d in dims:
        count *= d
    payload = fp.read(4 * count)
    if len(payload) != 4 * count:
        raise TensorFormatError(f"truncated payload: wanted {4 * count} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    return Tensor(arr)


def save_tensor(path, tensor: Tensor) -> None:
    with open(path, "wb") as fp:
        write_tensor(fp, tensor)


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fp:
        return read_tensor(fp)


def save_checkpoint(dirpath, tensors: dict[str, Tensor], metadata: Optional[dict] = None) -> None:
    """Write a named-tensor archive. Names must be non-empty and unique."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(d / DATA_NAME, "wb") as fp:
        for name in sorted(tensors):
            if not name:
                raise ValueError("checkpoint tensor names must be non-empty")
            t = tensors[name]
            size = write_tensor(fp, t)
            entries.append({"name": name, "offset": offset, "shape": list(t.shape)})
            offset += size
    index = {
        "schema_version": SCHEMA_VERSION,
        "entries": entries,
        "metadata": metadata or {},
    }
    with open(d / INDEX_NAME, "w") as fp:
        json.dump(index, fp, indent=2, sort_keys=True)
        fp.write("\n")


def load_checkpoint(dirpath) -> tuple[dict[str, Tensor], dict]:
    d = Path(dirpath)
    index_path = d / INDEX_NAME
    data_path = d / DATA_NAME
    if not index_path.exists() or not data_path.exists():
        raise TensorFormatError(f"{d} is not a checkpoint directory (missing index or data file)")
    with open(index_path) as fp:
        index = json.load(fp)
    if index.get("schema_version") != SCHEMA_VERSION:
        raise TensorFormatError(f"unsupported checkpoint schema {index.get('schema_version')!r}")
    tensors: dict[str, Tensor] = {}
    with open(data_path, "rb") as fp:
        for entry in index["entries"]:
            fp.seek(entry["offset"])
            t = read_tensor(fp)
            if list(t.shape) != entry["shape"]:
                raise TensorFormatError(
                    f"{entry['name']}: stored shape {list(t.shape)} != index shape {entry['shape']}"
                )
            tensors[entry["name"]] = t
    return tensors, index.get("metadata", {})
