"""Little-endian binary containers for weights (LSWT) and cached features (LSFT).

Both store float32 row-major payloads; see ``write_weights`` and
``write_feature`` for the byte layouts.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

WEIGHTS_MAGIC = b"LSWT"
FEATURE_MAGIC = b"LSFT"
VERSION = 1

_F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def _pack_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise FormatError("rank above 255")
    head = struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_F32).tobytes()


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.buf = memoryview(data)
        self.pos = 0
        self.source = source

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.source}: truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return bytes(self.take(n)).decode("utf-8")

    def tensor(self) -> np.ndarray:
        (rank,) = self.unpack("<B")
        dims = self.unpack(f"<{rank}I")
        count = int(np.prod(dims, dtype=np.int64))
        flat = np.frombuffer(bytes(self.take(4 * count)), dtype=_F32)
        return flat.reshape(dims)

    def header(self, magic: bytes):
        got = bytes(self.take(4))
        if got != magic:
            raise FormatError(f"{self.source}: bad magic {got!r}, expected {magic!r}")
        (version,) = self.unpack("<I")
        if version != VERSION:
            raise FormatError(f"{self.source}: unsupported version {version}")

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.source}: {len(self.buf) - self.pos} trailing bytes")


def weights_to_bytes(tensors: dict) -> bytes:
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC + struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        out.write(_pack_name(name))
        out.write(_pack_tensor(arr))
    return out.getvalue()


def weights_from_bytes(data: bytes, source: str = "<bytes>") -> dict:
    r = _Reader(data, source)
    r.header(WEIGHTS_MAGIC)
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.name()
        if name in tensors:
            raise FormatError(f"{source}: duplicate tensor {name!r}")
        tensors[name] = r.tensor()
    r.done()
    return tensors


def write_weights(path, tensors: dict) -> None:
    """Write named tensors.

    Layout: ``LSWT``, version u32, count u32, then per tensor a u16-prefixed
    UTF-8 name, rank u8, u32 dims and float32 values.
    """
    Path(path).write_bytes(weights_to_bytes(tensors))


def read_weights(path) -> dict:
    return weights_from_bytes(Path(path).read_bytes(), str(path))


def feature_to_bytes(identity: str, label: int, payload) -> bytes:
    return (FEATURE_MAGIC + struct.pack("<I", VERSION) + _pack_name(identity)
            + struct.pack("<B", int(label)) + _pack_tensor(payload))


def feature_from_bytes(data: bytes, source: str = "<bytes>"):
    r = _Reader(data, source)
    r.header(FEATURE_MAGIC)
    identity = r.name()
    (label,) = r.unpack("<B")
    payload = r.tensor()
    r.done()
    return identity, label, payload


def write_feature(path, identity: str, label: int, payload) -> None:
    """Write one cache entry: ``LSFT``, version, identity, label u8, tensor."""
    Path(path).write_bytes(feature_to_bytes(identity, label, payload))


def read_feature(path):
    return feature_from_bytes(Path(path).read_bytes(), str(path))
