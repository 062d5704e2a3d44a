"""Compressed partially binarized matrix.

Storage model, per output row and per calibration group of columns:

  * unsalient entries collapse to one bit each: value mu + alpha * sign,
    where mu is the mean of the group's unsalient entries and alpha is the
    optimal scale of the centered residue;
  * salient entries keep an asymmetric MinMax code of salient_bits bits:
    value min + scale * code with scale = (max - min) / (2^bits - 1);
  * the bitmap telling the two populations apart costs one bit per entry.

That prices a matrix at r + bits * (1 - r) + 1 bits per weight for unsalient
fraction r, e.g. 2.7 bits at r = 0.9 with 8-bit salients.

In memory the sign bitplane stays position-aligned (salient positions hold a
zero bit and are ignored) so packing is branch-free. Serialization drops
those dead bits: the "signs" tensor holds only unsalient positions, packed
densely in row-major order, which is what keeps the on-disk cost at the
budget above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _bits
from .binarize import sign_binarize
from .config import QuantConfig
from .saliency import SaliencyMask, group_bounds
from .tensorio import TensorContainer, check_matrix, check_vector

META_NAME = "meta"
TENSOR_NAMES = (
    "signs",
    "salient_mask",
    "alpha",
    "mu",
    "salient_min",
    "salient_scale",
    "salient_q",
    META_NAME,
)


@dataclass(frozen=True)
class BitBudget:
    r_binary: float
    salient_bits: int
    total_bits: float


def bit_budget(r_binary: float, salient_bits: int) -> BitBudget:
    """Average bits per weight: 1*r + salient_bits*(1-r) + 1 for the bitmap."""
    r_binary = float(r_binary)
    if not 0.0 <= r_binary <= 1.0:
        raise ValueError(f"r_binary must be in [0, 1], got {r_binary}")
    if not isinstance(salient_bits, (int, np.integer)) or salient_bits < 1:
        raise ValueError(f"salient_bits must be a positive integer, got {salient_bits}")
    # algebraically identical form; keeps the 0.9 / 8-bit case at exactly 2.7
    total = (salient_bits + 1.0) - r_binary * (salient_bits - 1.0)
    return BitBudget(r_binary=r_binary, salient_bits=int(salient_bits), total_bits=total)


def n_groups_for(cols: int, group_size: int) -> int:
    return len(group_bounds(cols, group_size))


@dataclass(frozen=True, eq=False)
class PBMatrix:
    rows: int
    cols: int
    group_size: int
    salient_bits: int
    signs: np.ndarray = field(repr=False)  # uint64 (rows, words), position-aligned
    mask: SaliencyMask = field(repr=False)
    alpha: np.ndarray = field(repr=False)  # float64 (rows, n_groups)
    mu: np.ndarray = field(repr=False)
    salient_min: np.ndarray = field(repr=False)
    salient_scale: np.ndarray = field(repr=False)
    salient_q: np.ndarray = field(repr=False)  # uint8, row-major over salient positions

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError(f"matrix must be nonempty, got {self.rows}x{self.cols}")
        if self.group_size < 0:
            raise ValueError(f"group_size must be >= 0, got {self.group_size}")
        if not 1 <= self.salient_bits <= 8:
            raise ValueError(f"salient_bits must be in [1, 8], got {self.salient_bits}")
        if (self.mask.rows, self.mask.cols) != (self.rows, self.cols):
            raise ValueError(
                f"mask is {self.mask.rows}x{self.mask.cols}, "
                f"matrix is {self.rows}x{self.cols}"
            )
        words = _bits.words_for(self.cols)
        signs = np.ascontiguousarray(self.signs, dtype=np.uint64)
        if signs.shape != (self.rows, words):
            raise ValueError(
                f"signs have shape {signs.shape}, expected ({self.rows}, {words})"
            )
        # the salient bitplane positions are dead; keep them zero so round
        # trips and equality mean what they say
        if (signs & self.mask.bits).any():
            raise ValueError("sign bits set at salient positions")
        signs.setflags(write=False)
        object.__setattr__(self, "signs", signs)

        ng = n_groups_for(self.cols, self.group_size)
        for name in ("alpha", "mu", "salient_min", "salient_scale"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.rows, ng):
                raise ValueError(
                    f"{name} has shape {arr.shape}, expected ({self.rows}, {ng})"
                )
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

        q = np.ascontiguousarray(self.salient_q, dtype=np.uint8)
        if q.shape != (self.mask.salient_count,):
            raise ValueError(
                f"salient_q has {q.shape[0] if q.ndim == 1 else q.shape} codes, "
                f"mask marks {self.mask.salient_count} positions"
            )
        qmax = (1 << self.salient_bits) - 1
        if q.size and int(q.max()) > qmax:
            raise ValueError(f"salient code exceeds {qmax} for {self.salient_bits} bits")
        q.setflags(write=False)
        object.__setattr__(self, "salient_q", q)

    @property
    def n_groups(self) -> int:
        return n_groups_for(self.cols, self.group_size)

    def storage_bits(self) -> int:
        """Meaningful payload bits: unsalient signs + salient codes + bitmap."""
        n = self.rows * self.cols
        n_sal = self.mask.salient_count
        return (n - n_sal) + self.salient_bits * n_sal + n

    @property
    def bits_per_weight(self) -> float:
        return self.storage_bits() / (self.rows * self.cols)


def _calibrate(
    w: np.ndarray, sal: np.ndarray, group_size: int, salient_bits: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-(row, group) mu/alpha over unsalient entries and MinMax over salient.

    Degenerate groups are pinned rather than propagated: a group with no
    unsalient entries gets mu = alpha = 0, one with no salient entries (or a
    constant salient population) gets scale = 0.
    """
    rows, cols = w.shape
    bounds = group_bounds(cols, group_size)
    ng = len(bounds)
    mu = np.zeros((rows, ng))
    alpha = np.zeros((rows, ng))
    smin = np.zeros((rows, ng))
    sscale = np.zeros((rows, ng))
    qmax = (1 << salient_bits) - 1
    for g, (start, stop) in enumerate(bounds):
        wg = w[:, start:stop]
        sg = sal[:, start:stop]
        ug = ~sg
        cnt_u = ug.sum(axis=1)
        any_u = cnt_u > 0
        sums = np.where(ug, wg, 0.0).sum(axis=1)
        mu_g = np.divide(sums, cnt_u, out=np.zeros(rows), where=any_u)
        dev = np.where(ug, np.abs(wg - mu_g[:, None]), 0.0).sum(axis=1)
        alpha_g = np.divide(dev, cnt_u, out=np.zeros(rows), where=any_u)

        cnt_s = sg.sum(axis=1)
        any_s = cnt_s > 0
        lo = np.where(sg, wg, np.inf).min(axis=1)
        hi = np.where(sg, wg, -np.inf).max(axis=1)
        lo = np.where(any_s, lo, 0.0)
        hi = np.where(any_s, hi, 0.0)
        scale_g = (hi - lo) / qmax

        mu[:, g] = mu_g
        alpha[:, g] = alpha_g
        smin[:, g] = lo
        sscale[:, g] = scale_g
    return mu, alpha, smin, sscale


def quantize_salient(
    w: np.ndarray, smin: np.ndarray, sscale: np.ndarray, salient_bits: int
) -> tuple[np.ndarray, np.ndarray]:
    """MinMax codes for `w` against broadcastable min/scale.

    Returns (codes as float64, clamped) where `clamped` marks entries that
    fell outside [0, 2^bits - 1] before saturation. Zero scale pins the code
    to 0 so dequantization returns the stored minimum.
    """
    qmax = float((1 << salient_bits) - 1)
    safe = np.where(sscale > 0, sscale, 1.0)
    raw = np.where(sscale > 0, np.rint((w - smin) / safe), 0.0)
    codes = np.clip(raw, 0.0, qmax)
    return codes, raw != codes


def _build(
    mask: SaliencyMask,
    group_size: int,
    salient_bits: int,
    signs_bool: np.ndarray,
    codes: np.ndarray,
    mu: np.ndarray,
    alpha: np.ndarray,
    smin: np.ndarray,
    sscale: np.ndarray,
) -> PBMatrix:
    sal = mask.to_bool()
    return PBMatrix(
        rows=mask.rows,
        cols=mask.cols,
        group_size=group_size,
        salient_bits=salient_bits,
        signs=_bits.pack_rows(signs_bool & ~sal),
        mask=mask,
        alpha=alpha,
        mu=mu,
        salient_min=smin,
        salient_scale=sscale,
        salient_q=codes[sal].astype(np.uint8),
    )


def assemble(w, mask: SaliencyMask, config: QuantConfig) -> PBMatrix:
    """Quantize W directly (no compensation): signs from w - mu per group,
    MinMax codes for the salient entries."""
    w = check_matrix(w, "W")
    if (mask.rows, mask.cols) != w.shape:
        raise ValueError(
            f"mask is {mask.rows}x{mask.cols}, W is {w.shape[0]}x{w.shape[1]}"
        )
    sal = mask.to_bool()
    mu, alpha, smin, sscale = _calibrate(w, sal, config.group_size, config.salient_bits)
    bounds = group_bounds(w.shape[1], config.group_size)
    signs_bool = np.zeros(w.shape, dtype=bool)
    codes = np.zeros(w.shape)
    for g, (start, stop) in enumerate(bounds):
        wg = w[:, start:stop]
        signs_bool[:, start:stop] = sign_binarize(wg - mu[:, g][:, None]) > 0
        cg, _ = quantize_salient(
            wg, smin[:, g][:, None], sscale[:, g][:, None], config.salient_bits
        )
        codes[:, start:stop] = cg
    return _build(
        mask, config.group_size, config.salient_bits,
        signs_bool, codes, mu, alpha, smin, sscale,
    )


def dequantize(pb: PBMatrix) -> np.ndarray:
    """Dense float64 reconstruction."""
    sal = pb.mask.to_bool()
    pos = _bits.unpack_rows(pb.signs, pb.cols)
    signs = np.where(pos, 1.0, -1.0)
    codes = np.zeros((pb.rows, pb.cols))
    codes[sal] = pb.salient_q.astype(np.float64)
    out = np.empty((pb.rows, pb.cols))
    for g, (start, stop) in enumerate(group_bounds(pb.cols, pb.group_size)):
        binary = pb.mu[:, g][:, None] + pb.alpha[:, g][:, None] * signs[:, start:stop]
        salient = (
            pb.salient_min[:, g][:, None]
            + pb.salient_scale[:, g][:, None] * codes[:, start:stop]
        )
        out[:, start:stop] = np.where(sal[:, start:stop], salient, binary)
    return out


def pb_matvec(pb: PBMatrix, x) -> np.ndarray:
    """y = What @ x computed from the compressed form.

    Uses the per-group decomposition alpha * sum(+-x) + mu * sum(x) over
    unsalient positions plus a sparse correction for the salient ones, rather
    than materializing the dense matrix.
    """
    x = check_vector(x, "x")
    if x.shape[0] != pb.cols:
        raise ValueError(f"x has length {x.shape[0]}, matrix has {pb.cols} columns")
    sal = pb.mask.to_bool()
    unsal = ~sal
    pos = _bits.unpack_rows(pb.signs, pb.cols)
    pm = np.where(pos, 1.0, -1.0) * unsal
    y = np.zeros(pb.rows)
    for g, (start, stop) in enumerate(group_bounds(pb.cols, pb.group_size)):
        xg = x[start:stop]
        signed = pm[:, start:stop] @ xg
        total = unsal[:, start:stop].astype(np.float64) @ xg
        y += pb.alpha[:, g] * signed + pb.mu[:, g] * total
    r, c = np.nonzero(sal)
    if r.size:
        g = c // pb.group_size if pb.group_size else np.zeros_like(c)
        vals = pb.salient_min[r, g] + pb.salient_scale[r, g] * pb.salient_q
        y += np.bincount(r, weights=vals * x[c], minlength=pb.rows)
    return y


def _flat_unsalient_signs(pb: PBMatrix) -> np.ndarray:
    pos = _bits.unpack_rows(pb.signs, pb.cols)
    return _bits.pack_flat(pos[~pb.mask.to_bool()])


def pack(pb: PBMatrix) -> TensorContainer:
    """Serialize to named tensors.

    "signs" holds only the unsalient positions (dense, row-major); the
    position-aligned bitplane is rebuilt from "salient_mask" on unpack.
    """
    c = TensorContainer()
    c.add("signs", _flat_unsalient_signs(pb))
    c.add("salient_mask", np.asarray(pb.mask.bits))
    c.add("alpha", np.asarray(pb.alpha))
    c.add("mu", np.asarray(pb.mu))
    c.add("salient_min", np.asarray(pb.salient_min))
    c.add("salient_scale", np.asarray(pb.salient_scale))
    c.add("salient_q", np.asarray(pb.salient_q))
    c.add(
        META_NAME,
        np.array([pb.rows, pb.cols, pb.group_size, pb.salient_bits], dtype=np.uint64),
    )
    return c


def unpack(container: TensorContainer) -> PBMatrix:
    for name in TENSOR_NAMES:
        if name not in container:
            raise ValueError(f"container is missing tensor {name!r}")
    meta = container.get(META_NAME)
    if meta.shape != (4,) or meta.dtype != np.uint64:
        raise ValueError(f"meta must be 4 x u64, got {meta.dtype} {meta.shape}")
    rows, cols, group_size, salient_bits = (int(v) for v in meta)
    if rows <= 0 or cols <= 0:
        raise ValueError(f"meta declares an empty matrix {rows}x{cols}")
    mask = SaliencyMask(rows, cols, container.get("salient_mask"))
    sal = mask.to_bool()
    n_unsal = rows * cols - mask.salient_count
    stream = container.get("signs")
    if stream.dtype != np.uint64 or stream.ndim != 1:
        raise ValueError(f"signs must be 1-D u64, got {stream.dtype} {stream.shape}")
    if stream.size != _bits.words_for(n_unsal):
        raise ValueError(
            f"signs hold {stream.size} words, expected {_bits.words_for(n_unsal)} "
            f"for {n_unsal} unsalient positions"
        )
    pos = np.zeros((rows, cols), dtype=bool)
    pos[~sal] = _bits.unpack_flat(stream, n_unsal)
    return PBMatrix(
        rows=rows,
        cols=cols,
        group_size=group_size,
        salient_bits=salient_bits,
        signs=_bits.pack_rows(pos),
        mask=mask,
        alpha=container.get("alpha"),
        mu=container.get("mu"),
        salient_min=container.get("salient_min"),
        salient_scale=container.get("salient_scale"),
        salient_q=container.get("salient_q"),
    )
