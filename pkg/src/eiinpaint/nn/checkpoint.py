"""Portable parameter checkpoints.

Byte layout (all integers little-endian)::

    magic      4 bytes   b"EIPC"
    version    u32       currently 1
    count      u32       number of arrays
    then per array:
      section  u8        0 = trainable weight, 1 = running buffer
      name_len u16       followed by name_len bytes of UTF-8
      dtype    u8        0 = float32, 1 = float64
      ndim     u8        followed by ndim u32 dimensions
      data     prod(dims) little-endian values, C order
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import NetworkParams

MAGIC = b"EIPC"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: NetworkParams, path) -> None:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.weights) + len(params.buffers))]
    for section, arrays in ((0, params.weights), (1, params.buffers)):
        for name, arr in arrays.items():
            code = _CODES.get(arr.dtype)
            if code is None:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<BH", section, len(raw)) + raw)
            chunks.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> NetworkParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    weights, buffers = {}, {}
    for _ in range(count):
        section, name_len = struct.unpack_from("<BH", data, pos)
        pos += 3
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        size = int(np.prod(shape)) * dtype.itemsize
        arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=pos).reshape(shape)
        pos += size
        (weights if section == 0 else buffers)[name] = arr.astype(dtype.newbyteorder("="))
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return NetworkParams(weights, buffers)
