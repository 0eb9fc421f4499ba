# SPDX-License-Identifier: Apache-2.0
"""Pure-Python reader/writer for the embedding store format.

An extractor can produce stores without linking the native module.
"""

import struct
import zlib

import numpy as np

MAGIC = b"MVPS"
VERSION = 1
HEADER = struct.Struct("<4sHHQII")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


def encode(array):
    a = np.asarray(array)
    if a.dtype not in _CODES:
        a = a.astype("<f4")
    a = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("expected a non-empty 2-D array")
    if not np.isfinite(a).all():
        raise ValueError("non-finite value in embeddings")
    payload = a.tobytes()
    header = HEADER.pack(MAGIC, VERSION, _CODES[a.dtype], a.shape[0], a.shape[1], zlib.crc32(payload))
    return header + payload


def decode(data):
    if len(data) < HEADER.size:
        raise ValueError("truncated header")
    magic, version, dtype, rows, dim, crc = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("bad magic")
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    if dtype not in _DTYPES:
        raise ValueError(f"unknown dtype {dtype}")
    payload = data[HEADER.size:]
    if len(payload) != rows * dim * _DTYPES[dtype].itemsize or zlib.crc32(payload) != crc:
        raise ValueError("checksum mismatch")
    return np.frombuffer(payload, dtype=_DTYPES[dtype]).reshape(rows, dim).copy()


def write(path, array):
    with open(path, "wb") as f:
        f.write(encode(array))


def read(path):
    with open(path, "rb") as f:
        return decode(f.read())
