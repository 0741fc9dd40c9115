"""Binary checkpoint container.

Layout (little-endian)::

    b"IRGN"  u32 version  u32 count
    repeated count times:
        u32 name_len  name (utf-8)  u32 rank  u64 dims[rank]  f64 values[prod(dims)]
"""
from __future__ import annotations

import os
import struct
from collections import OrderedDict
from typing import Iterable

import numpy as np

MAGIC = b"IRGN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: Iterable[tuple[str, np.ndarray]]) -> bytes:
    items = list(arrays)
    parts = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(data: bytes) -> "OrderedDict[str, np.ndarray]":
    if data[:4] != MAGIC:
        raise CheckpointError("not an IRGN checkpoint (bad magic)")
    off = 4
    try:
        version, count = struct.unpack_from("<II", data, off)
        off += 8
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            nbytes = 8 * size
            if off + nbytes > len(data):
                raise CheckpointError(f"truncated data for {name!r}")
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off)
            out[name] = arr.astype(np.float64).reshape(dims)
            off += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(data):
        raise CheckpointError("trailing bytes after last record")
    return out


def save(path: str | os.PathLike, arrays: Iterable[tuple[str, np.ndarray]]) -> None:
    payload = dumps(arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return loads(fh.read())
