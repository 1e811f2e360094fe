"""Binary container for a batch of flattened model updates.

Layout: magic ``RFA1``, u32 little-endian model count K, u64 little-endian
parameter count N, then K*N float64 little-endian values in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["MAGIC", "UpdateFileError", "read_update_file", "write_update_file"]

MAGIC = b"RFA1"
_HEADER = struct.Struct("<4sIQ")


class UpdateFileError(ValueError):
    """Raised for malformed update files."""


def write_update_file(path: str, matrix: np.ndarray) -> None:
    """Write a (K, N) float64 matrix with the RFA1 header."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValueError("update file needs a non-empty 2-d matrix")
    k, n = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, k, n))
        fh.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def read_update_file(path: str) -> np.ndarray:
    """Read a matrix written by :func:`write_update_file`."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise UpdateFileError(f"{path}: truncated header")
    magic, k, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise UpdateFileError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + k * n * 8
    if len(data) < expected:
        raise UpdateFileError(f"{path}: truncated, expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise UpdateFileError(f"{path}: {len(data) - expected} bytes of trailing data")
    if k < 1 or n < 1:
        raise UpdateFileError(f"{path}: empty matrix ({k} x {n})")
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return values.reshape(k, n).astype(np.float64)
