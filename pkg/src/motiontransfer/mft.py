"""MFT tensor files: a tiny self-describing little-endian tensor container.

Layout::

    b"MFTN" | version u8 (=1) | dtype u8 | rank u8 | reserved u8 (=0)
    rank x u64 LE dimensions | row-major LE payload

dtype codes: 0 = float32, 1 = float64, 2 = uint8.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"MFTN"
VERSION = 1
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_BY_KIND = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}


def dumps(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = _BY_KIND.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ContractError(f"MFT cannot store dtype {arr.dtype}")
    header = MAGIC + struct.pack("<BBBB", VERSION, code, arr.ndim, 0)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_CODES[code]).tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise ContractError("not an MFT tensor (bad magic)")
    version, code, rank, reserved = struct.unpack_from("<BBBB", buf, 4)
    if version != VERSION:
        raise ContractError(f"unsupported MFT version {version}")
    if code not in _CODES:
        raise ContractError(f"unknown MFT dtype code {code}")
    if reserved != 0:
        raise ContractError("MFT reserved byte must be 0")
    dims = struct.unpack_from(f"<{rank}Q", buf, 8)
    dtype = _CODES[code]
    offset = 8 + 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - offset != count * dtype.itemsize:
        raise ContractError("MFT payload size does not match header")
    out = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims)
    return out.astype(dtype.newbyteorder("="), copy=True)


def save(path, arr) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(arr))
    return path


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
