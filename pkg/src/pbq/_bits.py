"""Bit packing helpers shared by the mask and matrix containers.

Bit j of a logical row lands in word j // 64 at position j % 64, i.e. words
are little-endian both across and within: the lowest-indexed bit is the least
significant bit of the first word.
"""

from __future__ import annotations

import numpy as np

WORD_BITS = 64


def words_for(n_bits: int) -> int:
    return (n_bits + WORD_BITS - 1) // WORD_BITS


def pack_flat(bits: np.ndarray) -> np.ndarray:
    """Pack a 1-D boolean array into uint64 words, zero-padded at the tail."""
    bits = np.asarray(bits, dtype=bool).ravel()
    n_words = words_for(bits.size)
    padded = np.zeros(n_words * WORD_BITS, dtype=bool)
    padded[: bits.size] = bits
    packed = np.packbits(padded, bitorder="little")
    return np.frombuffer(packed.tobytes(), dtype="<u8").copy()


def unpack_flat(words: np.ndarray, n_bits: int) -> np.ndarray:
    """Inverse of pack_flat; returns a boolean array of length n_bits."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if words.size * WORD_BITS < n_bits:
        raise ValueError(
            f"need {words_for(n_bits)} words for {n_bits} bits, got {words.size}"
        )
    as_bytes = np.frombuffer(words.astype("<u8").tobytes(), dtype=np.uint8)
    return np.unpackbits(as_bytes, bitorder="little")[:n_bits].astype(bool)


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a 2-D boolean matrix row by row; each row padded to a word boundary."""
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim != 2:
        raise ValueError(f"expected a 2-D boolean matrix, got ndim={bits.ndim}")
    rows, cols = bits.shape
    n_words = words_for(cols)
    padded = np.zeros((rows, n_words * WORD_BITS), dtype=bool)
    padded[:, :cols] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    out = np.frombuffer(packed.tobytes(), dtype="<u8").reshape(rows, n_words)
    return out.copy()


def unpack_rows(words: np.ndarray, cols: int) -> np.ndarray:
    """Inverse of pack_rows; returns a boolean matrix of shape (rows, cols)."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if words.ndim != 2:
        raise ValueError(f"expected a 2-D word matrix, got ndim={words.ndim}")
    rows, n_words = words.shape
    if n_words != words_for(cols):
        raise ValueError(
            f"expected {words_for(cols)} words per row for {cols} columns, got {n_words}"
        )
    as_bytes = np.frombuffer(words.astype("<u8").tobytes(), dtype=np.uint8)
    full = np.unpackbits(as_bytes, bitorder="little").reshape(rows, n_words * WORD_BITS)
    return full[:, :cols].astype(bool)


def popcount(words: np.ndarray) -> int:
    return int(np.bitwise_count(np.asarray(words, dtype=np.uint64)).sum())
