"""The consumer's binary array container, reimplemented from its layout.

8-byte header: b"PL3D", then version, dtype code, rank, reserved (one byte
each), then rank little-endian uint32 dims, then the raw little-endian
payload. Codes: 1 = float32, 2 = uint8 (bools), 3 = int64. Scalars are
stored as length-1 vectors.
"""

import os
import struct

import numpy as np

from .errors import ExportError, MissingInput

MAGIC = b"PL3D"
VERSION = 1

_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<u1"), 3: np.dtype("<i8")}
_KIND_TO_CODE = {"f": 1, "u": 2, "b": 2, "i": 3}


def write_tensor(path: str, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array)
    if a.ndim == 0:
        a = a.reshape(1)
    code = _KIND_TO_CODE.get(a.dtype.kind)
    if code is None:
        raise ExportError(f"cannot store dtype {a.dtype}")
    a = a.astype(_CODE_TO_DTYPE[code], copy=False)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BBBB", VERSION, code, a.ndim, 0))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def read_tensor(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise MissingInput(f"no tensor file at {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise ExportError(f"{path}: not a tensor file")
    version, code, ndim, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != VERSION or reserved != 0 or code not in _CODE_TO_DTYPE:
        raise ExportError(f"{path}: unsupported tensor header")
    end = 8 + 4 * ndim
    if len(raw) < end:
        raise ExportError(f"{path}: truncated dims")
    shape = struct.unpack(f"<{ndim}I", raw[8:end])
    dtype = _CODE_TO_DTYPE[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) - end != expected:
        raise ExportError(f"{path}: payload size mismatch")
    return np.frombuffer(raw[end:], dtype=dtype).reshape(shape).copy()
