"""Sign binarization with an analytic scale.

For a weight vector w the binarized approximation is alpha * sign(w) with
J(alpha) = ||w - alpha * sign(w)||^2. Expanding gives
J(alpha) = alpha^2 n - 2 alpha ||w||_1 + w^T w, minimized at
alpha* = ||w||_1 / n, the mean absolute value.
"""

from __future__ import annotations

import numpy as np


def _finite(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def sign_binarize(w) -> np.ndarray:
    """Elementwise sign as int8 with sign(0) == +1 (negative zero included)."""
    w = _finite(w, "w")
    return np.where(w >= 0.0, 1, -1).astype(np.int8)


def optimal_alpha(w) -> float:
    """The scale minimizing ||w - alpha * sign(w)||^2: mean absolute value."""
    w = _finite(w, "w")
    if w.size == 0:
        raise ValueError("cannot compute a scale for an empty vector")
    return float(np.abs(w).mean())


def binarization_error(w, alpha: float) -> float:
    """Exact squared L2 error of the alpha-scaled sign approximation."""
    w = _finite(w, "w")
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    r = w - alpha * sign_binarize(w)
    return float(r.ravel() @ r.ravel())


def ste_backward(x, upstream, clip: float = 1.0):
    """Straight-through gradient: pass upstream where |x| <= clip, else 0.

    The boundary is inclusive. Works elementwise on arrays; scalars in,
    scalar out.
    """
    clip = float(clip)
    if not clip > 0.0:
        raise ValueError(f"clip must be positive, got {clip}")
    x = _finite(x, "x")
    upstream = _finite(upstream, "upstream")
    out = np.where(np.abs(x) <= clip, upstream, 0.0)
    if out.ndim == 0:
        return float(out)
    return out
