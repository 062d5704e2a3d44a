"""Writer for the PBTC tensor container format.

The byte layout is the interchange contract with the quantization toolkit,
so it is implemented here from the format definition rather than imported:
magic "PBTC", u32 version, u32 tensor count, then per tensor a u16 name
length, the UTF-8 name, a u8 dtype code, a u8 rank, one u64 per dimension,
a u64 payload byte length, and the raw payload padded to an 8-byte
boundary. All integers and payloads are little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PBTC"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f8"): 0,
    np.dtype("<f4"): 1,
    np.dtype("u1"): 2,
    np.dtype("<u8"): 3,
}


def entry_bytes(name: str, arr: np.ndarray) -> bytes:
    """Serialize one named tensor entry."""
    encoded = name.encode("utf-8")
    if not 0 < len(encoded) <= 0xFFFF:
        raise ValueError(f"tensor name must encode to 1..65535 bytes, got {len(encoded)}")
    wire = np.dtype(arr.dtype).newbyteorder("<")
    if wire not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype!r} for tensor {name!r}")
    payload = np.ascontiguousarray(arr, dtype=wire).tobytes(order="C")
    parts = [
        struct.pack("<H", len(encoded)),
        encoded,
        struct.pack("<BB", _DTYPE_CODES[wire], arr.ndim),
    ]
    parts.extend(struct.pack("<Q", int(dim)) for dim in arr.shape)
    parts.append(struct.pack("<Q", len(payload)))
    parts.append(payload)
    parts.append(b"\x00" * (-len(payload) % 8))
    return b"".join(parts)


def container_bytes(entries: list[tuple[str, np.ndarray]]) -> bytes:
    """Serialize named tensors into one container blob."""
    names = [name for name, _ in entries]
    if len(set(names)) != len(names):
        raise ValueError("duplicate tensor names in container")
    blob = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    blob.extend(entry_bytes(name, arr) for name, arr in entries)
    return b"".join(blob)
