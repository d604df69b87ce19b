"""CMT1 binary tensor container.

Layout of one record: magic ``b"CMT1"``, u8 rank, rank x u32 little-endian
extents, then the float32 little-endian payload in row-major order.  A file
may hold several records back to back.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import DatasetIOError

MAGIC = b"CMT1"


def write_record(fp: BinaryIO, array) -> None:
    arr = np.asarray(array, dtype="<f4", order="C")
    if arr.ndim > 255:
        raise DatasetIOError(f"rank {arr.ndim} exceeds CMT1 limit")
    fp.write(MAGIC)
    fp.write(struct.pack("<B", arr.ndim))
    fp.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fp.write(arr.tobytes())


def read_record(fp: BinaryIO, source="<stream>") -> np.ndarray:
    magic = fp.read(4)
    if magic != MAGIC:
        raise DatasetIOError(f"{source}: bad CMT1 magic {magic!r}")
    head = fp.read(1)
    if len(head) != 1:
        raise DatasetIOError(f"{source}: truncated CMT1 header")
    rank = head[0]
    raw = fp.read(4 * rank)
    if len(raw) != 4 * rank:
        raise DatasetIOError(f"{source}: truncated CMT1 extents")
    shape = struct.unpack(f"<{rank}I", raw)
    count = int(np.prod(shape)) if rank else 1
    payload = fp.read(4 * count)
    if len(payload) != 4 * count:
        raise DatasetIOError(f"{source}: truncated CMT1 payload (expected {count} floats)")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save(path, arrays) -> None:
    """Write a sequence of arrays as consecutive records."""
    path = Path(path)
    try:
        with open(path, "wb") as fp:
            for arr in arrays:
                write_record(fp, arr)
    except OSError as exc:
        raise DatasetIOError(f"{path}: {exc}") from exc


def load(path) -> list:
    path = Path(path)
    try:
        with open(path, "rb") as fp:
            out = []
            while fp.peek(1):
                out.append(read_record(fp, source=str(path)))
            return out
    except OSError as exc:
        raise DatasetIOError(f"{path}: {exc}") from exc
