"""Self-contained reader/writer for the .capf feature container.

Layout (little-endian): magic ``CAPF1\\0``, u32 rank, u32 extent per axis,
then the float32 payload in C order. This is a from-scratch implementation
kept deliberately free of any imgcap import; the format on disk is the only
contract between the two packages.
"""

import struct
from pathlib import Path

import numpy as np

from featx.errors import FormatError

MAGIC = b"CAPF1\0"


def write_capf(path, array: np.ndarray) -> None:
    if np.ndim(array) < 1:  # ascontiguousarray would silently promote 0-d
        raise FormatError("capf arrays must have rank >= 1")
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_capf(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:6] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:6]!r}")
    off = 6
    try:
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header ({exc})") from exc
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = off + 4 * count
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=off, count=count)
    return data.reshape(shape).copy()
