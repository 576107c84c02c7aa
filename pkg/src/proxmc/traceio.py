"""Binary chain-trace files: 16-byte header + packed little-endian float64.

Header: magic ``PXMC``, version, T, sample count (three little-endian
uint32).  Records follow row-major, one per stored sample: R_1..R_T then
O_1..O_T.  CSV would be impractical at full sample counts.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"PXMC"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_trace(path, samples_r, samples_o) -> None:
    samples_r = np.ascontiguousarray(samples_r, dtype="<f8")
    samples_o = np.ascontiguousarray(samples_o, dtype="<f8")
    if samples_r.shape != samples_o.shape or samples_r.ndim != 2:
        raise DataError("R and O sample blocks must be equal-shape 2-D arrays")
    n, T = samples_r.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, T, n))
        fh.write(np.hstack([samples_r, samples_o]).tobytes())


def read_trace(path):
    """Returns (samples_r, samples_o) as (n, T) float64 arrays."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, T, n = _HEADER.unpack(head)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * 2 * T:
        raise DataError(f"{path}: expected {n * 2 * T} values, found {data.size}")
    data = data.reshape(n, 2 * T)
    return data[:, :T].copy(), data[:, T:].copy()
