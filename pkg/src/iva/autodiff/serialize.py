"""The ``IVAT`` binary tensor container.

A record is::

    b"IVAT"            4 bytes
    rank               u32, little-endian
    extents            rank x u64, little-endian
    payload            prod(extents) x float64, little-endian, row-major

A file holds one or more records back to back.  Checkpoints are a
directory with one single-record file per named parameter.
"""
import os
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"IVAT"
_LE_F64 = np.dtype("<f8")


def record_size(shape):
    return 4 + 4 + 8 * len(shape) + 8 * int(np.prod(shape, dtype=np.int64))


def encode(arr):
    arr = np.asarray(arr, dtype=np.float64)
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()


def decode_all(buf):
    """Parse every record in ``buf``; raises FormatError with the byte offset of the fault."""
    out = []
    pos = 0
    n = len(buf)
    while pos < n:
        if n - pos < 8:
            raise FormatError("truncated record header", pos)
        if buf[pos:pos + 4] != MAGIC:
            raise FormatError(f"bad magic {bytes(buf[pos:pos + 4])!r}", pos)
        (rank,) = struct.unpack_from("<I", buf, pos + 4)
        pos += 8
        if n - pos < 8 * rank:
            raise FormatError(f"truncated extents for rank {rank}", pos)
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        if any(e == 0 for e in shape):
            raise FormatError(f"zero extent in shape {shape}", pos - 8 * rank)
        count = int(np.prod(shape, dtype=np.int64))
        if n - pos < 8 * count:
            raise FormatError(f"truncated payload: need {8 * count} bytes, have {n - pos}", n)
        arr = np.frombuffer(buf, dtype=_LE_F64, count=count, offset=pos).astype(np.float64)
        out.append(arr.reshape(shape))
        pos += 8 * count
    if not out:
        raise FormatError("empty container", 0)
    return out


def save_tensors(path, arrays):
    with open(path, "wb") as fh:
        for arr in arrays:
            fh.write(encode(arr))


def load_tensors(path):
    with open(path, "rb") as fh:
        return decode_all(fh.read())


def save_tensor(path, arr):
    save_tensors(path, [arr])


def load_tensor(path):
    arrays = load_tensors(path)
    if len(arrays) != 1:
        raise FormatError(f"expected one record, found {len(arrays)}", 0)
    return arrays[0]


def save_named(directory, named):
    """Write ``{name: array}`` as ``<directory>/<name>.ivat`` files."""
    os.makedirs(directory, exist_ok=True)
    for name, arr in named.items():
        save_tensor(os.path.join(directory, f"{name}.ivat"), arr)


def load_named(directory):
    named = {}
    for fname in sorted(os.listdir(directory)):
        if fname.endswith(".ivat"):
            named[fname[:-5]] = load_tensor(os.path.join(directory, fname))
    return named
