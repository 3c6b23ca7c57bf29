"""Binary checkpoint format (``.ckpt``).

All integers are little-endian. Layout::

    magic      4 bytes   b"SDCK"
    version    u32       currently 1
    count      u32       number of tensor records
    count x record, sorted by name (byte order of the UTF-8 name):
        name_len   u32
        name       name_len bytes, UTF-8
        dtype      u8        0=f32 1=f64 2=u64 3=i64 4=u8
        rank       u8
        extents    rank x u64
        data       prod(extents) * itemsize bytes, little-endian, C order

Names are slash namespaced: ``model/<param>``, ``opt/<slot>``,
``distill/<param>`` (restoration block and adapter, training only),
``rng/<stream>/<field>`` and ``meta/<key>``. Text metadata (role, the resolved
config) is stored as u8 arrays. Because records are sorted and nothing else is
written, save -> load -> save is byte-identical.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError

MAGIC = b"SDCK"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
TAGS = {v: k for k, v in DTYPES.items()}


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors, key=lambda n: n.encode()):
        arr = np.asarray(tensors[name])
        dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
        if dt not in TAGS:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", TAGS[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(parts)


def decode(buf: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic, not a checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"{source}: format version {version}, this build reads {VERSION}")
    pos = 12
    out: dict[str, np.ndarray] = {}

    def need(n, what):
        if pos + n > len(buf):
            raise FormatError(f"{source}: truncated while reading {what}")

    for _ in range(count):
        need(4, "name length")
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(nlen + 2, "name")
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        tag, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if tag not in DTYPES:
            raise FormatError(f"{source}: {name}: unknown dtype tag {tag}")
        need(8 * rank, f"{name} extents")
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        dt = DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        need(nbytes, f"{name} data")
        out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - pos} trailing bytes")
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    p = Path(path)
    tmp = p.with_name(p.name + ".tmp")
    tmp.write_bytes(encode(tensors))
    os.replace(tmp, p)


def load(path) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint not found: {p}")
    return decode(p.read_bytes(), str(p))


def text_to_u8(s: str) -> np.ndarray:
    return np.frombuffer(s.encode(), dtype=np.uint8).copy()


def u8_to_text(a: np.ndarray) -> str:
    return a.astype(np.uint8).tobytes().decode()


def sub(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Entries under ``prefix/`` with the prefix stripped."""
    pre = prefix.rstrip("/") + "/"
    return {k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre)}
