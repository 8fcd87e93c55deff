"""AAPT v1 tensor files.

Layout: magic bytes ``AAPT``, one u8 version, one u8 rank r, r little-endian
u32 dimension sizes, then the row-major little-endian float32 payload. Used
for feature tensors, filter kernels, and checkpoint parameters.
"""

import struct

import numpy as np

MAGIC = b"AAPT"
VERSION = 1


class FormatError(ValueError):
    pass


def save_tensor(path, array):
    """Write a float array to an AAPT v1 file."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds the u8 rank field")
    for d in arr.shape:
        if d > 0xFFFFFFFF:
            raise FormatError(f"dimension {d} exceeds u32")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_tensor(path):
    """Read an AAPT v1 file back into a float32 array."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, rank = struct.unpack("<BB", fh.read(2))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
        count = 1
        for d in dims:
            count *= d
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise FormatError(f"{path}: truncated payload")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
