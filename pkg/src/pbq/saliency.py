"""Salient-weight detection.

A small fraction of weights carries a disproportionate share of a layer's
output error when binarized. This module ranks weights either by magnitude
or by the inverse-Hessian criterion v_ij = w_ij^2 / ([H^-1]_jj)^2 and returns
the top fraction as a packed bitmap mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _bits
from .tensorio import check_matrix

GRANULARITIES = ("element", "column")


def round_half_up(x: float) -> int:
    """Ties away from zero for nonnegative x: round_half_up(2.5) == 3."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class SaliencyMask:
    """Packed per-row bitmap; bit j of row i sits in word j // 64 at j % 64."""

    rows: int
    cols: int
    bits: np.ndarray = field(repr=False)  # uint64, shape (rows, words)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint64)
        if bits.shape != (self.rows, _bits.words_for(self.cols)):
            raise ValueError(
                f"mask words have shape {bits.shape}, expected "
                f"({self.rows}, {_bits.words_for(self.cols)})"
            )
        # padding bits beyond cols must stay zero for popcounts to mean anything
        tail = _bits.unpack_rows(bits, bits.shape[1] * _bits.WORD_BITS)[:, self.cols :]
        if tail.any():
            raise ValueError("mask has bits set beyond the last column")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bool(cls, mask: np.ndarray) -> "SaliencyMask":
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got ndim={mask.ndim}")
        return cls(mask.shape[0], mask.shape[1], _bits.pack_rows(mask))

    def to_bool(self) -> np.ndarray:
        return _bits.unpack_rows(self.bits, self.cols)

    @property
    def salient_count(self) -> int:
        return _bits.popcount(self.bits)

    @property
    def fraction(self) -> float:
        n = self.rows * self.cols
        return self.salient_count / n if n else 0.0


@dataclass(frozen=True)
class MaskStats:
    salient_count: int
    fraction: float
    per_column: np.ndarray


def group_bounds(cols: int, group_size: int) -> list[tuple[int, int]]:
    """Column ranges [start, stop) per group; group_size 0 means one group."""
    if group_size < 0:
        raise ValueError(f"group_size must be >= 0, got {group_size}")
    if group_size == 0:
        return [(0, cols)]
    return [(g, min(g + group_size, cols)) for g in range(0, cols, group_size)]


def _check_fraction(fraction: float) -> float:
    fraction = float(fraction)
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    return fraction


def _top_flat(metric: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries; ties go to the lower flat index."""
    flat = metric.ravel()
    order = np.argsort(-flat, kind="stable")
    return order[:k]


def _detect_elementwise(metric: np.ndarray, fraction: float, group_size: int) -> np.ndarray:
    rows, cols = metric.shape
    out = np.zeros((rows, cols), dtype=bool)
    for start, stop in group_bounds(cols, group_size):
        block = metric[:, start:stop]
        k = round_half_up(fraction * block.size)
        if k == 0:
            continue
        idx = _top_flat(block, k)
        r, c = np.unravel_index(idx, block.shape)
        out[r, c + start] = True
    return out


def _detect_columns(metric: np.ndarray, fraction: float, group_size: int) -> np.ndarray:
    rows, cols = metric.shape
    out = np.zeros((rows, cols), dtype=bool)
    for start, stop in group_bounds(cols, group_size):
        norms = np.abs(metric[:, start:stop]).sum(axis=0)
        k = round_half_up(fraction * (stop - start))
        if k == 0:
            continue
        chosen = _top_flat(norms, k)
        out[:, chosen + start] = True
    return out


def detect_magnitude(
    w,
    fraction: float,
    granularity: str = "element",
    group_size: int = 0,
) -> SaliencyMask:
    """Mark the top `fraction` of weights by |w| as salient.

    Element granularity ranks individual entries; column granularity ranks
    whole columns by their L1 norm. With group_size g > 0 the ranking and the
    count round_half_up(fraction * group_elements) apply per block of g
    consecutive columns.
    """
    w = check_matrix(w, "W")
    fraction = _check_fraction(fraction)
    if granularity not in GRANULARITIES:
        raise ValueError(
            f"granularity must be one of {GRANULARITIES}, got {granularity!r}"
        )
    metric = np.abs(w)
    if granularity == "element":
        chosen = _detect_elementwise(metric, fraction, group_size)
    else:
        chosen = _detect_columns(w, fraction, group_size)
    return SaliencyMask.from_bool(chosen)


def detect_hessian(w, hinv, fraction: float, group_size: int = 0) -> SaliencyMask:
    """Mark the top `fraction` of weights by w^2 / diag(H^-1)^2 as salient.

    Element granularity only; the denominator is shared along columns, so a
    column ranking would collapse to the magnitude criterion anyway.
    """
    w = check_matrix(w, "W")
    fraction = _check_fraction(fraction)
    hinv = check_matrix(hinv, "Hinv")
    if hinv.shape != (w.shape[1], w.shape[1]):
        raise ValueError(
            f"Hinv must be ({w.shape[1]}, {w.shape[1]}) for W {w.shape}, "
            f"got {hinv.shape}"
        )
    if not np.allclose(hinv, hinv.T, rtol=1e-8, atol=1e-12):
        raise ValueError("Hinv is not symmetric")
    diag = np.diag(hinv)
    if (diag <= 0).any():
        raise ValueError("Hinv has a nonpositive diagonal entry")
    metric = (w * w) / (diag * diag)[None, :]
    return SaliencyMask.from_bool(_detect_elementwise(metric, fraction, group_size))


def mask_stats(mask: SaliencyMask) -> MaskStats:
    dense = mask.to_bool()
    return MaskStats(
        salient_count=mask.salient_count,
        fraction=mask.fraction,
        per_column=dense.sum(axis=0),
    )
