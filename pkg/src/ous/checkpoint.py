"""Self-describing little-endian checkpoint archive.

Layout: ``"OUSK" | u32 version | u32 count`` then per parameter
``u16 name_len | name | u8 dtype (0=f32, 1=f64) | u8 rank | u32 dims[rank] |
payload``, then a UTF-8 JSON trailer followed by its u64 length.
Parameters are written in lexicographic name order.
"""

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"OUSK"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def encode_checkpoint(params, trailer):
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        value = np.asarray(params[name])
        code = _CODES.get(value.dtype)
        if code is None:
            raise ValueError(f"parameter {name!r} has unsupported dtype {value.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", code, value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype=_DTYPES[code]).tobytes())
    text = json.dumps(trailer, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(text + struct.pack("<Q", len(text)))
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def decode_checkpoint(blob):
    """Return ``(params, trailer)`` from checkpoint bytes."""
    if blob[:4] != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    if len(blob) < 20:
        raise FormatError("checkpoint too short", len(blob))
    (trailer_len,) = struct.unpack("<Q", blob[-8:])
    body_end = len(blob) - 8 - trailer_len
    if trailer_len > len(blob) - 8 or body_end < 12:
        raise FormatError("checkpoint trailer length out of range", len(blob) - 8)
    reader = _Reader(blob[:body_end])
    reader.take(4, "magic")
    version, count = reader.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    params = {}
    for _ in range(count):
        start = reader.pos
        (name_len,) = reader.unpack("<H", "name length")
        try:
            name = reader.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not UTF-8", start + 2) from None
        code, rank = reader.unpack("<BB", "dtype and rank")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code}", reader.pos - 2)
        dims = reader.unpack(f"<{rank}I", "dims")
        dtype = _DTYPES[code]
        count_el = int(np.prod(dims, dtype=np.uint64)) if rank else 1
        payload = reader.take(count_el * dtype.itemsize, f"payload of {name!r}")
        if name in params:
            raise FormatError(f"duplicate parameter {name!r}", start)
        params[name] = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("=")).reshape(dims)
    if reader.pos != body_end:
        raise FormatError("unexpected bytes before the trailer", reader.pos)
    try:
        trailer = json.loads(blob[body_end:len(blob) - 8].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("checkpoint trailer is not JSON", body_end) from None
    return params, trailer


def save_checkpoint(path, params, trailer):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params, trailer))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())
