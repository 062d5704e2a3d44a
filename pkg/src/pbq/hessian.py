"""Calibration Hessian: accumulate H = 2 * X @ X.T, invert with damping.

The layer objective ||W X - What X||_F^2 is quadratic per output row with
Hessian 2 X X^T, so the whole calibration set reduces to this one d_i x d_i
matrix. finalize() adds lambda = damping_fraction * mean(diag(H)) to the
diagonal before inverting and also returns the upper Cholesky factor of the
inverse, which is what the column-compensation loop consumes.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .tensorio import check_matrix


class FactorizationError(RuntimeError):
    """Damped Hessian is not positive definite."""


class HessianState:
    def __init__(self, dim: int, damping_fraction: float = 0.01):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        if damping_fraction < 0:
            raise ValueError(
                f"damping_fraction must be >= 0, got {damping_fraction}"
            )
        self.dim = dim
        self.damping_fraction = float(damping_fraction)
        self.h = np.zeros((dim, dim))
        self.n_samples = 0

    def __repr__(self) -> str:
        return (
            f"HessianState(dim={self.dim}, n_samples={self.n_samples}, "
            f"damping_fraction={self.damping_fraction})"
        )


def accumulate(state: HessianState, x) -> HessianState:
    """Add a batch of calibration columns (shape dim x n). Single writer."""
    x = check_matrix(x, "X")
    if x.shape[0] != state.dim:
        raise ValueError(f"X has {x.shape[0]} rows, state dimension is {state.dim}")
    if x.shape[1] == 0:
        raise ValueError("X has no columns")
    state.h += 2.0 * (x @ x.T)
    state.n_samples += x.shape[1]
    return state


def finalize(state: HessianState) -> tuple[np.ndarray, np.ndarray]:
    """Return (Hinv, upper Cholesky factor U of Hinv, so Hinv = U.T @ U).

    Does not mutate the state; accumulate/finalize can be interleaved.
    """
    if state.n_samples < 1:
        raise ValueError("no samples accumulated")
    lam = state.damping_fraction * float(np.mean(np.diag(state.h)))
    damped = state.h + lam * np.eye(state.dim)
    try:
        factor = scipy.linalg.cho_factor(damped, lower=True)
        hinv = scipy.linalg.cho_solve(factor, np.eye(state.dim))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"damped Hessian is not positive definite ({exc}); "
            f"raise damping_fraction (currently {state.damping_fraction})"
        ) from exc
    hinv = (hinv + hinv.T) / 2.0
    try:
        upper = np.linalg.cholesky(hinv).T
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(
            f"inverse Hessian lost positive definiteness ({exc}); "
            f"raise damping_fraction (currently {state.damping_fraction})"
        ) from exc
    return hinv, upper
