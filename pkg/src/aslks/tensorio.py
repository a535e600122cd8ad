"""Little-endian binary layout for tensors and named tensor bundles.

Single tensor record::

    offset  size  field
    0       2     magic b"T4"
    2       1     dtype tag: 0 = float32, 1 = float64
    3       16    dims n, c, h, w as four little-endian u32
    19      ...   payload, NCHW row-major, little-endian IEEE-754

Bundle (several named records in one file)::

    b"T4C\\0", u32 count, then per entry: u16 name length, UTF-8 name,
    tensor record

Arrays of rank < 4 are stored with leading unit dims and the original rank
is not recorded; callers reshape on load.
"""
from __future__ import annotations

import io
import struct

import numpy as np

from .errors import InputError

_HEADER = struct.Struct("<2sB4I")
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {v: k for k, v in _TAGS.items()}
_BUNDLE_MAGIC = b"T4C\0"


def _as4(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim > 4:
        raise InputError(f"cannot store a rank-{a.ndim} array")
    if a.dtype not in _TAGS:
        a = a.astype(np.float64)
    return a.reshape((1,) * (4 - a.ndim) + a.shape)


def encode_tensor(a) -> bytes:
    a = _as4(a)
    le = a.astype(a.dtype.newbyteorder("<"), copy=False)
    return _HEADER.pack(b"T4", _TAGS[a.dtype], *a.shape) + np.ascontiguousarray(le).tobytes()


def decode_tensor(buf, offset: int = 0) -> tuple:
    """Return ``(array, next_offset)``."""
    if len(buf) - offset < _HEADER.size:
        raise InputError("truncated tensor header")
    magic, tag, *dims = _HEADER.unpack_from(buf, offset)
    if magic != b"T4" or tag not in _DTYPES:
        raise InputError(f"bad tensor header at byte {offset}")
    dt = _DTYPES[tag].newbyteorder("<")
    count = int(np.prod(dims))
    start = offset + _HEADER.size
    end = start + count * dt.itemsize
    if end > len(buf):
        raise InputError("truncated tensor payload")
    a = np.frombuffer(buf, dtype=dt, count=count, offset=start).astype(_DTYPES[tag]).reshape(dims)
    return a, end


def save_tensor(path, a) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(a))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())[0]


def encode_bundle(named: dict) -> bytes:
    out = io.BytesIO()
    out.write(_BUNDLE_MAGIC)
    out.write(struct.pack("<I", len(named)))
    for name, arr in named.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(encode_tensor(arr))
    return out.getvalue()


def decode_bundle(buf) -> dict:
    if buf[:4] != _BUNDLE_MAGIC:
        raise InputError("not a tensor bundle")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos, out = 8, {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        name = bytes(buf[pos + 2:pos + 2 + ln]).decode("utf-8")
        out[name], pos = decode_tensor(buf, pos + 2 + ln)
    return out


def save_bundle(path, named: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_bundle(named))


def load_bundle(path) -> dict:
    with open(path, "rb") as fh:
        return decode_bundle(fh.read())
