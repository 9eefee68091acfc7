"""Binary tensor container: "PL3D" magic, fixed little-endian header, raw row-major payload.

Header layout (all little-endian):
    bytes 0..3   magic b"PL3D"
    byte  4      format version (currently 1)
    byte  5      dtype code: 1 = f32, 2 = u8, 3 = i64
    byte  6      ndim
    byte  7      reserved, must be 0
    then         ndim x u32 dims
Payload is exactly prod(dims) elements, row-major.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import CorruptHeader, DimMismatch, MissingFile

MAGIC = b"PL3D"
VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<u1"), 3: np.dtype("<i8")}


def _code_for(arr: np.ndarray) -> int:
    if arr.dtype == np.uint8 or arr.dtype == np.bool_:
        return 2
    if np.issubdtype(arr.dtype, np.floating):
        return 1
    if np.issubdtype(arr.dtype, np.integer):
        return 3
    raise ValueError(f"unsupported dtype for tensor file: {arr.dtype}")


def write_tensor(path: str, arr: np.ndarray) -> None:
    """Write an array to `path`; floats stored as f32, bools as u8, ints as i64."""
    arr = np.asarray(arr)
    code = _code_for(arr)
    data = np.ascontiguousarray(arr.astype(_DTYPE_CODES[code], copy=False))
    header = MAGIC + struct.pack("<BBBB", VERSION, code, data.ndim, 0)
    header += struct.pack(f"<{data.ndim}I", *data.shape) if data.ndim else b""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_tensor(path: str) -> np.ndarray:
    """Read a tensor file, rejecting unknown magic/version and truncated payloads."""
    if not os.path.isfile(path):
        raise MissingFile(f"tensor file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise CorruptHeader(f"header truncated: {path}")
    if raw[:4] != MAGIC:
        raise CorruptHeader(f"bad magic {raw[:4]!r}: {path}")
    version, code, ndim, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != VERSION:
        raise CorruptHeader(f"unknown format version {version}: {path}")
    if code not in _DTYPE_CODES:
        raise CorruptHeader(f"unknown dtype code {code}: {path}")
    if reserved != 0:
        raise CorruptHeader(f"nonzero reserved byte: {path}")
    if len(raw) < 8 + 4 * ndim:
        raise CorruptHeader(f"dims truncated: {path}")
    dims = struct.unpack(f"<{ndim}I", raw[8 : 8 + 4 * ndim]) if ndim else ()
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[8 + 4 * ndim :]
    if len(payload) != expected:
        raise DimMismatch(
            f"payload is {len(payload)} bytes, dims {tuple(dims)} require {expected}: {path}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
