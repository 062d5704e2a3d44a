"""Tensor container format and the dense-matrix primitives shared by all modules.

Wire layout (everything little-endian):

    magic   4 bytes  b"PBTC"
    version u32      currently 1
    count   u32      number of tensor entries
    entry:
        name_len u16
        name     name_len bytes of UTF-8
        dtype    u8   0 = f64, 1 = f32, 2 = u8, 3 = u64
        ndim     u8
        dims     ndim x u64
        nbytes   u64  payload length; must equal prod(dims) * itemsize
        payload  nbytes bytes, row-major, followed by zero padding to the
                 next multiple of 8 bytes

The format is deliberately dumb: no compression, no offsets table, nothing a
reader in another language needs beyond struct unpacking.
"""

from __future__ import annotations

import math
import struct
from typing import Iterator

import numpy as np

MAGIC = b"PBTC"
VERSION = 1

_WIRE_DTYPES = {
    0: np.dtype("<f8"),
    1: np.dtype("<f4"),
    2: np.dtype("u1"),
    3: np.dtype("<u8"),
}
_CODES = {dt: code for code, dt in _WIRE_DTYPES.items()}


class ContainerFormatError(ValueError):
    """Malformed container bytes; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def check_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a finite float64 C-order 2-D array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_vector(a, name: str = "vector") -> np.ndarray:
    """Validate and return a finite float64 1-D array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def dense_matmul(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Product W @ X with shape and finiteness validation."""
    w = check_matrix(w, "W")
    x = check_matrix(x, "X")
    if w.shape[1] != x.shape[0]:
        raise ValueError(
            f"inner dimensions do not match: W is {w.shape}, X is {x.shape}"
        )
    return w @ x


def _wire_dtype(arr: np.ndarray) -> tuple[int, np.dtype]:
    key = np.dtype(arr.dtype.str.lstrip("<>=|"))
    for code, dt in _WIRE_DTYPES.items():
        if dt.kind == key.kind and dt.itemsize == key.itemsize:
            return code, dt
    raise ValueError(
        f"unsupported dtype {arr.dtype}; supported: f64, f32, u8, u64"
    )


class TensorContainer:
    """Insertion-ordered named tensors restricted to the wire dtype menu."""

    def __init__(self):
        self.entries: list[tuple[str, np.ndarray]] = []

    def add(self, name: str, array) -> None:
        if name in self.names():
            raise ValueError(f"duplicate tensor name {name!r}")
        arr = np.ascontiguousarray(array)
        _wire_dtype(arr)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.entries.append((name, arr))

    def get(self, name: str) -> np.ndarray:
        for n, arr in self.entries:
            if n == name:
                return arr
        raise KeyError(f"no tensor named {name!r}")

    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def __contains__(self, name: str) -> bool:
        return name in self.names()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorContainer):
            return NotImplemented
        if self.names() != other.names():
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.entries, other.entries)
        )


def container_to_bytes(container: TensorContainer) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(container.entries))
    seen: set[str] = set()
    for name, arr in container.entries:
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long ({len(encoded)} bytes)")
        code, wire = _wire_dtype(arr)
        payload = np.ascontiguousarray(arr).astype(wire, copy=False).tobytes(order="C")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += struct.pack("<Q", len(payload))
        out += payload
        out += b"\x00" * (-len(payload) % 8)
    return bytes(out)


def write_container(container: TensorContainer, path) -> None:
    data = container_to_bytes(container)
    with open(path, "wb") as fh:
        fh.write(data)


def container_from_bytes(data: bytes) -> TensorContainer:
    view = memoryview(data)
    off = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise ContainerFormatError(f"truncated {what}", off)
        chunk = view[off : off + n]
        off += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise ContainerFormatError(
            f"bad magic {bytes(view[:4])!r}, expected {MAGIC!r}", 0
        )
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise ContainerFormatError(f"unsupported version {version}", 4)

    container = TensorContainer()
    seen: set[str] = set()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name_off = off
        name = bytes(take(name_len, "name")).decode("utf-8")
        if name in seen:
            raise ContainerFormatError(f"duplicate tensor name {name!r}", name_off)
        seen.add(name)
        dtype_off = off
        code, ndim = struct.unpack("<BB", take(2, "dtype/ndim"))
        if code not in _WIRE_DTYPES:
            raise ContainerFormatError(f"unknown dtype code {code}", dtype_off)
        wire = _WIRE_DTYPES[code]
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim, "dims"))
        nbytes_off = off
        (nbytes,) = struct.unpack("<Q", take(8, "payload length"))
        expected = math.prod(dims) * wire.itemsize
        if nbytes != expected:
            raise ContainerFormatError(
                f"payload length {nbytes} does not match shape {dims} "
                f"({expected} bytes expected)",
                nbytes_off,
            )
        payload = take(nbytes, f"payload of {name!r}")
        take(-nbytes % 8, f"padding after {name!r}")
        arr = np.frombuffer(payload, dtype=wire).reshape(dims).copy()
        container.entries.append((name, arr))
    if off != len(view):
        raise ContainerFormatError(f"{len(view) - off} trailing bytes", off)
    return container


def read_container(path) -> TensorContainer:
    with open(path, "rb") as fh:
        return container_from_bytes(fh.read())
