"""Hessian accumulation and damped inversion."""

import numpy as np
import pytest

from pbq.hessian import FactorizationError, HessianState, accumulate, finalize

from reference import hessian_reference


def test_single_sample_example():
    state = HessianState(2)
    accumulate(state, np.array([[1.0], [0.0]]))
    assert state.h.tolist() == [[2.0, 0.0], [0.0, 0.0]]
    assert state.n_samples == 1


def test_accumulate_matches_outer_product_reference():
    rng = np.random.default_rng(0)
    batches = [rng.normal(size=(5, n)) for n in (1, 3, 8)]
    state = HessianState(5)
    for b in batches:
        accumulate(state, b)
    np.testing.assert_allclose(state.h, hessian_reference(batches), rtol=1e-12)
    assert state.n_samples == 12


def test_accumulate_validation():
    state = HessianState(3)
    with pytest.raises(ValueError, match="state dimension is 3"):
        accumulate(state, np.zeros((4, 2)))
    with pytest.raises(ValueError, match="no columns"):
        accumulate(state, np.zeros((3, 0)))
    with pytest.raises(ValueError, match="dim must be positive"):
        HessianState(0)
    with pytest.raises(ValueError, match="damping_fraction"):
        HessianState(3, damping_fraction=-0.5)


def test_identity_hessian_closed_form():
    # X = I gives H = 2I; with no damping Hinv = I/2 and U = I/sqrt(2)
    state = HessianState(4, damping_fraction=0.0)
    accumulate(state, np.eye(4))
    hinv, upper = finalize(state)
    np.testing.assert_allclose(hinv, 0.5 * np.eye(4), atol=1e-14)
    np.testing.assert_allclose(upper, np.sqrt(0.5) * np.eye(4), atol=1e-14)


def test_finalize_residual_and_factor():
    rng = np.random.default_rng(1)
    state = HessianState(8, damping_fraction=0.01)
    accumulate(state, rng.normal(size=(8, 50)))
    hinv, upper = finalize(state)
    lam = 0.01 * np.mean(np.diag(state.h))
    damped = state.h + lam * np.eye(8)
    np.testing.assert_allclose(damped @ hinv, np.eye(8), atol=1e-10)
    np.testing.assert_allclose(upper.T @ upper, hinv, atol=1e-14)
    assert np.allclose(upper, np.triu(upper))
    np.testing.assert_allclose(hinv, hinv.T)


def test_damping_uses_mean_diagonal():
    x = np.diag([1.0, 2.0])
    state = HessianState(2, damping_fraction=0.5)
    accumulate(state, x)
    hinv, _ = finalize(state)
    # H = diag(2, 8), lam = 0.5 * 5, damped = diag(4.5, 10.5)
    np.testing.assert_allclose(hinv, np.diag([1 / 4.5, 1 / 10.5]), rtol=1e-14)


def test_finalize_does_not_mutate_state():
    rng = np.random.default_rng(2)
    state = HessianState(5)
    accumulate(state, rng.normal(size=(5, 20)))
    h_before = state.h.copy()
    a1, u1 = finalize(state)
    np.testing.assert_array_equal(state.h, h_before)
    accumulate(state, rng.normal(size=(5, 20)))
    a2, _ = finalize(state)
    assert not np.allclose(a1, a2)
    a3, u3 = finalize(state)
    np.testing.assert_array_equal(a2, a3)


def test_finalize_without_samples_rejected():
    with pytest.raises(ValueError, match="no samples"):
        finalize(HessianState(3))


def test_rank_deficient_without_damping_raises():
    state = HessianState(3, damping_fraction=0.0)
    accumulate(state, np.array([[1.0], [0.0], [0.0]]))
    with pytest.raises(FactorizationError, match="damping_fraction"):
        finalize(state)


def test_damping_rescues_rank_deficiency():
    state = HessianState(3, damping_fraction=0.01)
    accumulate(state, np.array([[1.0], [0.0], [0.0]]))
    hinv, upper = finalize(state)
    assert np.isfinite(hinv).all()
    np.testing.assert_allclose(upper.T @ upper, hinv, atol=1e-14)
