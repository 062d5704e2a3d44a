"""Acceptance gate: one test per headline guarantee, tolerances pinned.

Each test prints a single summary line; `pytest -v` adds the pass/fail
verdict per criterion. Runtime budgets are asserted, not aspirational.
"""

import time

import numpy as np
import pytest

from pbq.binarize import binarization_error, optimal_alpha
from pbq.config import QuantConfig
from pbq.hessian import HessianState, accumulate
from pbq.pbgptq import evaluate, pbgptq_quantize, rtn_quantize
from pbq.pbmatrix import bit_budget, dequantize, pack, pb_matvec
from pbq.qat import (
    AdamState,
    PBLinearLayer,
    demo_problem,
    layer_params,
    pb_backward,
    pb_forward,
    train_demo,
)
from pbq.saliency import detect_magnitude
from pbq.tensorio import TensorContainer, container_to_bytes

from reference import compensated_quantize_reference, grid_objective
from synthetic import correlated_layer, diagonal_activations


class Budget:
    """Context timer that enforces the criterion's runtime bound."""

    def __init__(self, name: str, seconds: float):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def done(self, detail: str):
        elapsed = time.perf_counter() - self.t0
        print(f"[acceptance] {self.name}: PASS ({detail}) in {elapsed:.2f}s "
              f"(budget {self.seconds:.0f}s)")
        assert elapsed < self.seconds, f"{self.name} took {elapsed:.2f}s"

    def __exit__(self, exc_type, exc, tb):
        return False


def quantize_with(w, x, config):
    state = HessianState(w.shape[1], config.damping_fraction)
    accumulate(state, x)
    return pbgptq_quantize(w, state, config)


def test_alpha_optimality():
    # 1000 vectors, grid step 1e-3 over [0, 2 max|w|]: the analytic scale is
    # never beaten by more than 1e-9 and equals mean |w| exactly
    with Budget("alpha optimality", 5.0) as budget:
        rng = np.random.default_rng(0)
        worst_gap = -np.inf
        for _ in range(1000):
            n = int(rng.integers(1, 65))
            w = rng.normal(size=n) * rng.uniform(0.05, 4.0)
            alpha = optimal_alpha(w)
            assert alpha == float(np.abs(w).mean())
            best = binarization_error(w, alpha)
            grid = np.arange(0.0, 2.0 * float(np.abs(w).max()) + 1e-3, 1e-3)
            gap = best - float(grid_objective(w, grid).min())
            worst_gap = max(worst_gap, gap)
        assert worst_gap <= 1e-9
        budget.done(f"1000 vectors, worst analytic-minus-grid gap {worst_gap:.2e}")


def test_bit_budget_and_serialized_size():
    with Budget("bit budget", 1.0) as budget:
        assert bit_budget(0.9, 8).total_bits == 2.7
        sweep = [bit_budget(r / 10, 8).total_bits for r in range(11)]
        assert all(b < a for a, b in zip(sweep, sweep[1:]))

        rng = np.random.default_rng(1)
        w = rng.normal(size=(512, 512))
        pb = rtn_quantize(w, QuantConfig(salient_fraction=0.1))
        container = pack(pb)
        # the budget formula prices signs, salient codes and the bitmap; the
        # per-group calibration constants are side info outside it
        priced = TensorContainer()
        for name, arr in container:
            if name in ("signs", "salient_q", "salient_mask"):
                priced.add(name, arr)
        measured = len(container_to_bytes(priced))
        allowed = 2.7 * w.size / 8 + 256
        assert measured <= allowed
        budget.done(
            f"budget 2.7 exact, sweep monotone, payload {measured} B "
            f"<= {allowed:.0f} B"
        )


def test_compensation_beats_plain_rounding():
    # 20 seeds, fraction 0.10: compensated error <= 0.9 x uncompensated
    # in at least 95% of seeds
    with Budget("compensation vs plain rounding", 30.0) as budget:
        config = QuantConfig(salient_fraction=0.10)
        wins = 0
        for seed in range(20):
            w, x = correlated_layer(seed)
            pb, _ = quantize_with(w, x, config)
            err = evaluate(w, pb, x).relative_error
            err_plain = evaluate(w, rtn_quantize(w, config), x).relative_error
            wins += err <= 0.9 * err_plain
        assert wins >= 19
        budget.done(f"{wins}/20 seeds at or under the 0.9 ratio")


def test_hessian_criterion_beats_magnitude():
    # same synthetic setup, fractions 0.05 and 0.10: curvature-aware
    # selection errs no more than magnitude selection in >= 70% of seeds
    with Budget("saliency criterion comparison", 30.0) as budget:
        details = []
        for fraction in (0.05, 0.10):
            wins = 0
            for seed in range(20):
                w, x = correlated_layer(seed)
                state = HessianState(w.shape[1])
                accumulate(state, x)
                cfg_h = QuantConfig(salient_fraction=fraction, criterion="hessian")
                cfg_m = QuantConfig(salient_fraction=fraction, criterion="magnitude")
                pb_h, _ = pbgptq_quantize(w, state, cfg_h)
                pb_m, _ = pbgptq_quantize(w, state, cfg_m)
                err_h = evaluate(w, pb_h, x).relative_error
                err_m = evaluate(w, pb_m, x).relative_error
                wins += err_h <= err_m
            assert wins >= 14
            details.append(f"{wins}/20 at fraction {fraction}")
        budget.done(", ".join(details))


def test_oracle_equivalence():
    # stable triangular path vs explicit-inverse reference, 1e-6 elementwise
    with Budget("oracle equivalence", 5.0) as budget:
        worst = 0.0
        for size in (8, 16):
            for seed in (0, 1):
                w, x = correlated_layer(seed, rows=size, cols=size, n_samples=4 * size)
                pb, _ = quantize_with(w, x, QuantConfig(salient_fraction=0.1))
                ref = compensated_quantize_reference(w, x, 0.1)
                gap = float(np.abs(dequantize(pb) - ref).max())
                worst = max(worst, gap)
        assert worst <= 1e-6
        budget.done(f"8x8 and 16x16, worst elementwise gap {worst:.2e}")


def test_identity_hessian_degeneracy():
    # exactly uncorrelated calibration: compensation must change nothing
    with Budget("uncorrelated-calibration degeneracy", 5.0) as budget:
        for seed in range(3):
            w, _ = correlated_layer(seed, rows=32, cols=32)
            x = diagonal_activations(seed, 32)
            config = QuantConfig(salient_fraction=0.1)
            pb, _ = quantize_with(w, x, config)
            plain = rtn_quantize(w, config)
            np.testing.assert_array_equal(pb.signs, plain.signs)
            np.testing.assert_array_equal(pb.mask.bits, plain.mask.bits)
            np.testing.assert_array_equal(pb.salient_q, plain.salient_q)
            for name in ("alpha", "mu", "salient_min", "salient_scale"):
                np.testing.assert_array_equal(getattr(pb, name), getattr(plain, name))
        budget.done("3 seeds bit-for-bit identical to plain rounding")


def test_pack_unpack_round_trip():
    from pbq.pbmatrix import assemble, unpack
    from pbq.tensorio import container_from_bytes

    with Budget("pack/unpack round trip", 5.0) as budget:
        rng = np.random.default_rng(2)
        edge_cols = [1, 63, 64, 65]
        for case in range(50):
            cols = edge_cols[case % 4] if case < 8 else int(rng.integers(1, 100))
            rows = int(rng.integers(1, 20))
            fraction = float(rng.uniform(0.0, 1.0))
            group_size = int(rng.choice([0, 8, 16]))
            w = rng.normal(size=(rows, cols))
            config = QuantConfig(salient_fraction=fraction, group_size=group_size)
            pb = assemble(w, detect_magnitude(w, fraction, group_size=group_size), config)
            back = unpack(container_from_bytes(container_to_bytes(pack(pb))))
            np.testing.assert_array_equal(back.signs, pb.signs)
            np.testing.assert_array_equal(back.mask.bits, pb.mask.bits)
            np.testing.assert_array_equal(back.salient_q, pb.salient_q)
            for name in ("alpha", "mu", "salient_min", "salient_scale"):
                np.testing.assert_array_equal(getattr(back, name), getattr(pb, name))
            np.testing.assert_array_equal(dequantize(back), dequantize(pb))
        budget.done("50 matrices incl. cols 1/63/64/65, all bit-exact")


def test_compressed_matvec():
    with Budget("compressed matvec", 5.0) as budget:
        rng = np.random.default_rng(3)
        worst = 0.0
        for case in range(100):
            rows = int(rng.integers(1, 40))
            cols = int(rng.integers(1, 90))
            fraction = float(rng.uniform(0.0, 1.0))
            group_size = int(rng.choice([0, 4, 16]))
            w = rng.normal(size=(rows, cols)) * rng.uniform(0.1, 3.0)
            config = QuantConfig(salient_fraction=fraction, group_size=group_size)
            from pbq.pbmatrix import assemble

            pb = assemble(w, detect_magnitude(w, fraction, group_size=group_size), config)
            x = rng.normal(size=cols)
            want = dequantize(pb) @ x
            got = pb_matvec(pb, x)
            denom = float(np.linalg.norm(want))
            gap = float(np.linalg.norm(got - want)) / (denom if denom > 0 else 1.0)
            worst = max(worst, gap)
        assert worst <= 1e-9
        budget.done(f"100 cases, worst relative gap {worst:.2e}")


def run_demo_training_replica(fraction, steps, seed, lr=1e-3):
    """Mirror of the demo training loop that keeps the layers visible."""
    (w1, b1, w2, b2), x, y = demo_problem(seed)
    l1 = PBLinearLayer.init(w1, b1, fraction)
    l2 = PBLinearLayer.init(w2, b2, fraction)
    unsal1, unsal2 = ~l1._salient, ~l2._salient
    opt = AdamState(
        [l1.latent_w.shape, l1.bias.shape, l2.latent_w.shape, l2.bias.shape], lr
    )
    losses = []
    n = y.size
    for step in range(1, steps + 1):
        opt.lr = lr * 0.5 * (1.0 + np.cos(np.pi * (step - 1) / steps))
        p1, p2 = layer_params(l1), layer_params(l2)
        z = pb_forward(l1, x, params=p1)
        h = np.tanh(z)
        out = pb_forward(l2, h, params=p2)
        resid = out - y
        losses.append(float(np.mean(resid * resid)))
        up2 = 2.0 * resid / n
        g2 = pb_backward(l2, h, up2, params=p2)
        up1 = g2.x * (1.0 - h * h)
        g1 = pb_backward(l1, x, up1, params=p1)
        d_w1, d_b1, d_w2, d_b2 = opt.updates([g1.latent_w, g1.bias, g2.latent_w, g2.bias])
        l1.latent_w[unsal1] -= d_w1[unsal1]
        l2.latent_w[unsal2] -= d_w2[unsal2]
        l1.bias -= d_b1
        l2.bias -= d_b2
    return losses, (l1, l2), (w1, w2)


def test_qat_training():
    with Budget("training-time binarization", 60.0) as budget:
        records = train_demo(0.3, steps=2000, seed=0)
        ratio = records[-1].loss / records[0].loss
        assert ratio < 0.5

        # replica reproduces the run bitwise and exposes the layers, which
        # proves the salient entries never moved during those 2000 steps
        losses, (l1, l2), (w1, w2) = run_demo_training_replica(0.3, 2000, 0)
        assert losses[0] == records[0].loss and losses[-1] == records[-1].loss
        np.testing.assert_array_equal(l1.latent_w[l1._salient], w1[l1._salient])
        np.testing.assert_array_equal(l2.latent_w[l2._salient], w2[l2._salient])

        # surrogate gradient agrees with central differences at every
        # trainable coordinate
        (tw1, tb1, _, _), x, _ = demo_problem(0)
        layer = PBLinearLayer.init(tw1, tb1, 0.3)
        xb = x[:, :8].copy()
        c = np.random.default_rng(99).normal(size=(layer.out_features, 8))
        params = layer_params(layer)
        grads = pb_backward(layer, xb, c, params=params, surrogate=True)
        eps = 1e-6
        worst_fd = 0.0
        for i, j in zip(*np.nonzero(~layer._salient)):
            saved = layer.latent_w[i, j]
            layer.latent_w[i, j] = saved + eps
            hi = float((c * pb_forward(layer, xb, params=params, surrogate=True)).sum())
            layer.latent_w[i, j] = saved - eps
            lo = float((c * pb_forward(layer, xb, params=params, surrogate=True)).sum())
            layer.latent_w[i, j] = saved
            fd = (hi - lo) / (2 * eps)
            worst_fd = max(worst_fd, abs(fd - grads.latent_w[i, j]))
        assert worst_fd < 1e-4

        # a small protected set must speed convergence at matched steps
        wins = 0
        for seed in range(10):
            with_frozen = train_demo(0.02, steps=2000, seed=seed)[-1].loss
            without = train_demo(0.0, steps=2000, seed=seed)[-1].loss
            wins += with_frozen < without
        assert wins >= 7
        budget.done(
            f"loss ratio {ratio:.3f}, salient frozen, fd gap {worst_fd:.1e}, "
            f"2% beats 0% in {wins}/10 seeds"
        )


def test_fraction_sweep_monotone():
    with Budget("fraction sweep", 10.0) as budget:
        fractions = (0.05, 0.1, 0.3, 0.5, 1.0)
        for seed in range(6):
            w, x = correlated_layer(seed)
            state = HessianState(w.shape[1])
            accumulate(state, x)
            errs = []
            for fraction in fractions:
                pb, _ = pbgptq_quantize(w, state, QuantConfig(salient_fraction=fraction))
                errs.append(evaluate(w, pb, x).relative_error)
            assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:])), (seed, errs)
        budget.done(f"6 layers non-increasing over fractions {fractions}")
