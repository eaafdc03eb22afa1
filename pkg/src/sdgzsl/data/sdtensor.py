"""SDTensor: a small little-endian container for named dense arrays.

Layout::

    b"SDT1"                  magic
    u32                      entry count
    per entry:
      u16 + utf-8 bytes      name
      u8                     dtype (0 = f32, 1 = f64, 2 = i64)
      u8                     rank
      rank x u64             extents
      payload                row-major, little-endian
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from sdgzsl.errors import FormatError

MAGIC = b"SDT1"
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def _code_for(arr: np.ndarray) -> int:
    dt = arr.dtype.newbyteorder("=")
    if dt in CODES:
        return CODES[dt]
    if dt.kind in "iub":
        return 2
    raise FormatError(f"unsupported dtype {arr.dtype} (SDTensor stores f32, f64, i64)")


def encode_sdtensor(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _code_for(arr)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FormatError(f"entry name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"rank {arr.ndim} too large for entry {name}")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_sdtensor(buf: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated SDTensor while reading {what}", offset=pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    (count,) = struct.unpack("<I", take(4, "entry count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        start = pos
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not valid UTF-8", offset=start) from None
        code_at = pos
        code, rank = struct.unpack("<BB", take(2, f"header of {name!r}"))
        if code not in DTYPES:
            raise FormatError(f"unknown dtype code {code} for entry {name!r}", offset=code_at)
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"extents of {name!r}"))
        dt = DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        payload = take(nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last entry", offset=pos)
    return out


def write_sdtensor(path, tensors: Mapping[str, np.ndarray]) -> None:
    data = encode_sdtensor(tensors)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_sdtensor(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode_sdtensor(fh.read())
