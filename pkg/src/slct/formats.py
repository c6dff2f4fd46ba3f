"""NVOL/NTRA binary containers, PGM export and atomic file writes.

Layout (little endian)::

    offset  size  field
    0       4     magic, b"NVOL" (volume) or b"NTRA" (transient)
    4       4     version, u32
    8       12    dims, 3 x u32: (ny, nx, nz) or (ny, nx, nt)
    20      8     wall_size, f64 [m]
    28      8     bin_length, f64 [m]
    36      ...   payload, f32, row-major [y][x][last]
"""

import os
import struct
import tempfile
from typing import NamedTuple

import numpy as np

VERSION = 1
MAGIC_VOLUME = b"NVOL"
MAGIC_TRANSIENT = b"NTRA"
_HEADER = struct.Struct("<4sI3Idd")
HEADER_SIZE = _HEADER.size


class FormatError(ValueError):
    pass


class Header(NamedTuple):
    magic: bytes
    version: int
    dims: tuple
    wall_size: float
    bin_length: float


def atomic_write(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temp file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(data, magic, wall_size, bin_length) -> bytes:
    if magic not in (MAGIC_VOLUME, MAGIC_TRANSIENT):
        raise FormatError(f"unknown magic {magic!r}")
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise FormatError("payload must be 3D")
    header = _HEADER.pack(magic, VERSION, *arr.shape, float(wall_size), float(bin_length))
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode(buf: bytes, expect=None):
    if len(buf) < HEADER_SIZE:
        raise FormatError("file too short for header")
    magic, version, ny, nx, nl, wall, binlen = _HEADER.unpack_from(buf)
    if magic not in (MAGIC_VOLUME, MAGIC_TRANSIENT):
        raise FormatError(f"bad magic {magic!r}")
    if expect is not None and magic != expect:
        raise FormatError(f"expected {expect.decode()} file, found {magic.decode()}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    n = ny * nx * nl
    if len(buf) - HEADER_SIZE != 4 * n:
        raise FormatError(f"payload is {len(buf) - HEADER_SIZE} bytes, header implies {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=HEADER_SIZE).reshape(ny, nx, nl)
    return data.astype(np.float32), Header(magic, version, (ny, nx, nl), wall, binlen)


def write_volume(path, data, wall_size, bin_length):
    atomic_write(path, encode(data, MAGIC_VOLUME, wall_size, bin_length))


def write_transient(path, data, wall_size, bin_length):
    atomic_write(path, encode(data, MAGIC_TRANSIENT, wall_size, bin_length))


def read_volume(path):
    with open(path, "rb") as fh:
        return decode(fh.read(), MAGIC_VOLUME)


def read_transient(path):
    with open(path, "rb") as fh:
        return decode(fh.read(), MAGIC_TRANSIENT)


def read_any(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


# ------------------------------------------------------------------- images


def encode_pgm16(img) -> bytes:
    """Binary 16-bit PGM of an image in [0, 1] (values clipped)."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise FormatError("PGM needs a 2D image")
    q = np.round(np.clip(img, 0.0, 1.0) * 65535.0).astype(">u2")
    h, w = img.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + q.tobytes()


def encode_pgm8(img) -> bytes:
    q = np.asarray(img, dtype=np.uint8)
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def decode_pgm(buf: bytes) -> np.ndarray:
    """Read a binary PGM into integer samples."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64)


def write_pgm16(path, img):
    atomic_write(path, encode_pgm16(img))


def write_mask(path, mask):
    atomic_write(path, encode_pgm8(np.where(mask, 255, 0)))


def read_mask(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read()) > 0
