import math

import numpy as np
import pytest

from psdecouple.analysis import SweepGeometry, fit_loglog_slope, remainder_sweep
from psdecouple.conjugation import (
    CalibrationError,
    ConvergenceError,
    apply_K,
    apply_K_PS,
    apply_K_SP,
    calibrate_M,
    cutoff_symbol,
    estimate_K_norms,
    invert_I_plus_K,
    k_ps_symbol,
    make_conjugation,
    conjugation_remainder,
    symbol_check_K_PS,
)
from psdecouple.grid import make_grid
from psdecouple.media import SmoothBump, make_lame_field
from psdecouple.operators import adjoint_residual, operator_handle, project

from conftest import random_field


@pytest.fixture(scope="module")
def conj64(bump64):
    return make_conjugation(bump64, 2.0)


class TestCutoff:
    def test_values(self):
        xi = np.array([[0.0, 1.9, 2.0, 3.0, 4.0, 9.0], [0, 0, 0, 0, 0, 0]])
        phi = cutoff_symbol(xi, 2.0)
        assert np.allclose(phi, [0, 0, 0, 0.5, 1, 1])

    def test_smooth_joins(self):
        eps = 1e-6
        for r in (2.0, 4.0):
            a = cutoff_symbol(np.array([[r - eps], [0.0]]), 2.0)[0]
            b = cutoff_symbol(np.array([[r + eps], [0.0]]), 2.0)[0]
            assert abs(a - b) < 1e-10

    def test_bad_M(self, bump64):
        with pytest.raises(ValueError):
            make_conjugation(bump64, 0.5)


class TestCoefficientField:
    def test_b_matches_finite_differences(self):
        errs = []
        # the FD error reaches its O(h^2) regime once the bump is resolved
        for n in (256, 512):
            g = make_grid(2, n)
            f = make_lame_field(g, SmoothBump(centers=((math.pi + 0.9, math.pi - 0.6),)))
            b = make_conjugation(f, 2.0).b.physical.real
            h = g.spacing
            fd = np.stack([(np.roll(f.mu, -1, k) - np.roll(f.mu, 1, k)) / (2 * h) for k in range(2)])
            errs.append(np.max(np.abs(b - fd / (f.mu + f.lam))))
        assert errs[1] < 2e-3
        assert 3.0 < errs[0] / errs[1] < 5.0

    def test_constant_medium_K_is_zero(self, const64):
        c = make_conjugation(const64, 2.0)
        w = random_field(const64.grid, 1)
        assert apply_K(c, w).norm() == 0.0


class TestStructure:
    def test_block_ranges(self, conj64):
        w = random_field(conj64.grid, 2)
        kps = apply_K_PS(conj64, w)
        ksp = apply_K_SP(conj64, w)
        assert project("S", kps).norm() <= 1e-12 * kps.norm()
        assert project("P", ksp).norm() <= 1e-12 * ksp.norm()
        # K_PS ignores P input and K_SP ignores S input
        assert apply_K_PS(conj64, project("P", w)).norm() <= 1e-14
        assert apply_K_SP(conj64, project("S", w)).norm() <= 1e-14 * w.norm()

    @pytest.mark.parametrize("seed", range(4))
    def test_antisymmetry(self, conj64, seed):
        w, v = random_field(conj64.grid, seed), random_field(conj64.grid, seed + 50)
        lhs = apply_K_PS(conj64, w).inner(v) + w.inner(apply_K_SP(conj64, v))
        assert abs(lhs) <= 1e-10 * w.norm() * v.norm()
        assert adjoint_residual(operator_handle("K", conj64.lame, conj64), w, v) <= 1e-10 * w.norm() * v.norm()

    def test_order_minus_one(self, bump128):
        c = make_conjugation(bump128, 2.0)
        rows = remainder_sweep(bump128, c, carriers=(8, 16, 32))
        # ||K w_k|| ~ 1/|k|
        assert abs(fit_loglog_slope(rows, "K_PS_order").slope) <= 0.15


class TestCalibration:
    def test_calibrated_norms(self, bump64):
        M = calibrate_M(bump64)
        assert M >= 2
        norms = estimate_K_norms(make_conjugation(bump64, M), (-1, 0, 1))
        assert max(norms.values()) <= 0.5

    def test_constant_medium(self, const64):
        assert calibrate_M(const64) == 2.0

    def test_larger_M_shrinks_K(self, bump64):
        n2 = estimate_K_norms(make_conjugation(bump64, 2.0), (0,))[0.0]
        n8 = estimate_K_norms(make_conjugation(bump64, 8.0), (0,))[0.0]
        assert n8 < n2

    def test_too_rough_for_grid(self):
        g = make_grid(2, 16)
        f = make_lame_field(g, SmoothBump(amplitudes=(10.0,), widths=(0.5,), lambda_amplitudes=(-0.97,)))
        with pytest.raises(CalibrationError):
            calibrate_M(f)


class TestNeumann:
    def test_residual_and_decay(self, conj64):
        v = random_field(conj64.grid, 3)
        hist = []
        w = invert_I_plus_K(conj64, v, history=hist)
        res = (w + apply_K(conj64, w) - v).norm()
        assert res <= 2e-10 * v.norm()
        knorm = max(estimate_K_norms(conj64, (0,)).values())
        assert all(b <= (knorm + 1e-3) * a for a, b in zip(hist, hist[1:]))

    def test_not_converged(self, conj64):
        with pytest.raises(ConvergenceError):
            invert_I_plus_K(conj64, random_field(conj64.grid, 3), max_terms=2)

    def test_zero(self, conj64):
        z = random_field(conj64.grid, 0) * 0.0
        assert invert_I_plus_K(conj64, z).norm() == 0.0


class TestSymbol:
    def test_frozen_coefficient_identity(self, conj64):
        g = conj64.grid
        rng = np.random.default_rng(0)
        pts = rng.integers(0, g.points_per_axis, size=(10, 2)) * g.spacing
        for x in pts:
            for j in range(8):
                ang = j * math.pi / 8 + 0.1
                assert symbol_check_K_PS(conj64, x, (math.cos(ang), math.sin(ang)), 10.0) <= 1e-10

    def test_homogeneity(self, conj64):
        xi = np.array([6.0, 8.0])
        a = k_ps_symbol(conj64, (1.0, 2.0), xi)
        b = k_ps_symbol(conj64, (1.0, 2.0), 2 * xi)
        assert np.linalg.norm(b - 0.5 * a) <= 1e-14 * np.linalg.norm(a)

    def test_below_cutoff(self, conj64):
        with pytest.raises(ValueError):
            symbol_check_K_PS(conj64, (0.0, 0.0), (1.0, 0.0), 3.0)


class TestRemainder:
    def test_constant_medium_zero(self, const64):
        c = make_conjugation(const64, 2.0)
        w = random_field(const64.grid, 5)
        assert conjugation_remainder(c, w).norm() <= 1e-10 * w.norm()

    def test_cancellation(self, bump128):
        c = make_conjugation(bump128, 2.0)
        geo = SweepGeometry()
        w = geo.packet(bump128.grid, 32, "S")
        full = conjugation_remainder(c, w).norm()
        ablated = conjugation_remainder(c, w, include_K=False).norm()
        assert full < 0.25 * ablated
