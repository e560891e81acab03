import math

import numpy as np
import pytest

from psdecouple.grid import divergence, make_grid, sobolev_norm
from psdecouple.media import (
    C11Radial,
    Constant,
    PacketSpec,
    PositivityError,
    SmoothBump,
    make_lame_field,
    plane_wave_packet,
    polarization_vector,
    random_band_limited,
    validate_lame,
)
from psdecouple.operators import project

L = 2 * math.pi
CENTER = (math.pi, math.pi)


class TestLameFields:
    def test_constant(self, grid64):
        f = make_lame_field(grid64, Constant(1.0, 1.0))
        assert np.all(f.mu == 1) and np.all(f.lam == 1)
        assert f.c11_norms["mu"]["grad_lipschitz"] == 0
        assert f.c11_norms["lambda"]["grad_sup"] == 0

    def test_zero_amplitude_bump_is_constant(self, grid64):
        f = make_lame_field(grid64, SmoothBump(amplitudes=(0.0,)))
        g = make_lame_field(grid64, Constant(1.0, 1.0))
        assert np.array_equal(f.mu, g.mu) and np.array_equal(f.lam, g.lam)

    def test_bump_support_seam(self, grid64):
        with pytest.raises(ValueError, match="seam"):
            make_lame_field(grid64, SmoothBump(widths=(3.5,)))

    def test_positivity_violation(self, grid64):
        with pytest.raises(PositivityError):
            make_lame_field(grid64, SmoothBump(amplitudes=(-1.2,)))

    def test_validate_constant(self, grid64):
        r = validate_lame(make_lame_field(grid64, Constant(1.0, 1.0)))
        assert (r.min_mu, r.min_mu_plus_lambda, r.min_p_modulus) == (1.0, 2.0, 3.0)

    def test_validate_failure_names_constraint(self, grid64):
        from psdecouple.media import LameField

        f = LameField(grid64, np.ones(grid64.shape), -3 * np.ones(grid64.shape), Constant(1, -3))
        with pytest.raises(PositivityError, match=r"min\(2 mu \+ lambda\) = -1 <= 0"):
            validate_lame(f)

    @pytest.mark.parametrize("amp", [0.3, -0.3])
    def test_bump_minima(self, grid64, amp):
        r = validate_lame(make_lame_field(grid64, SmoothBump(amplitudes=(amp,))))
        assert min(r.min_mu, r.min_mu_plus_lambda, r.min_p_modulus) >= 0.4
        if amp < 0:
            # direct grid minimum: mu0 + amp at the bump center, which is a grid point
            assert r.min_mu == pytest.approx(0.7, abs=1e-12)


def _line(grid, f):
    j = grid.points_per_axis // 2
    return f.mu[:, j]


class TestC11Radial:
    def family(self):
        return C11Radial(amplitudes=(0.3,), radii=(L / 8,), centers=(CENTER,), lambda_amplitudes=(0.0,))

    def test_second_derivative_jump(self):
        # finite differences along x1 through the center; stencils never straddle the glue radius
        a, R = 0.3, L / 8
        expected_jump = 8 * a / R**2
        jumps = []
        for n in (128, 256, 512):
            g = make_grid(2, n)
            u = _line(g, make_lame_field(g, self.family()))
            h = g.spacing
            x = np.arange(n) * h
            d2 = (np.roll(u, -1) - 2 * u + np.roll(u, 1)) / h**2
            d1 = (np.roll(u, -1) - np.roll(u, 1)) / (2 * h)
            r = np.abs(x - math.pi) / R
            inside = (r < 1 - h / R) & (r > 1 - 3 * h / R)
            outside = (r > 1 + h / R) & (r < 1 + 3 * h / R)
            jumps.append(np.max(np.abs(d2[inside])) - np.max(np.abs(d2[outside])))
            # first derivative continuous across the glue radius up to O(h)
            assert np.max(np.abs(d1[inside | outside])) <= 4 * expected_jump * h
        assert min(jumps) >= 0.6 * expected_jump
        assert abs(jumps[-1] - expected_jump) < abs(jumps[0] - expected_jump)
        assert jumps[-1] == pytest.approx(expected_jump, rel=0.1)

    def test_lipschitz_gradient_converges_second_difference_does_not_decay(self):
        stats = []
        for n in (64, 128, 256):
            g = make_grid(2, n)
            f = make_lame_field(g, self.family())
            stats.append(f.c11_norms["mu"])
        grads = [s["grad_sup"] for s in stats]
        assert abs(grads[2] - grads[1]) < abs(grads[1] - grads[0]) + 1e-12
        lips = [s["grad_lipschitz"] for s in stats]
        assert lips[1] / lips[0] >= 0.5 and lips[2] / lips[1] >= 0.5

    def test_passes_validation(self, grid64):
        validate_lame(make_lame_field(grid64, self.family()))


class TestPackets:
    def test_p_packet_pure(self, grid128):
        w = plane_wave_packet(grid128, PacketSpec(CENTER, (8, 0), "P", 0.37))
        assert project("S", w).norm() <= 1e-12 * w.norm()
        assert w.norm() == pytest.approx(1.0)

    def test_s_packet_divergence_free(self, grid128):
        assert np.allclose(polarization_vector((8, 0), "S"), (0, 1))
        w = plane_wave_packet(grid128, PacketSpec(CENTER, (8, 0), "S", 0.37))
        assert divergence(w).norm() <= 1e-12 * w.norm()

    def test_spectral_mass_near_carrier(self, grid128):
        w = plane_wave_packet(grid128, PacketSpec(CENTER, (8, 0), "P", 0.37))
        xi = grid128.wavevectors()
        dist = np.sqrt((xi[0] - 8) ** 2 + xi[1] ** 2)
        mass = np.sum(np.abs(w.coef) ** 2, axis=0)
        assert mass[dist <= 32].sum() >= 0.99 * mass.sum()

    def test_envelope_too_wide(self, grid128):
        # L/16 leaves ~3e-8 of the mass in the boundary strip, above the 1e-8 limit
        with pytest.raises(ValueError, match="too wide"):
            plane_wave_packet(grid128, PacketSpec(CENTER, (8, 0), "P", L / 16))

    def test_3d_polarizations(self):
        k = (2, 3, 1)
        p = polarization_vector(k, "P")
        s0 = polarization_vector(k, "S", 0)
        s1 = polarization_vector(k, "S", 1)
        basis = np.stack([p, s0, s1])
        assert np.allclose(basis @ basis.T, np.eye(3))
        # first S branch is e_1 orthogonalized against k
        e1 = np.array([1.0, 0, 0])
        khat = np.array(k) / np.linalg.norm(k)
        v = e1 - khat * (e1 @ khat)
        assert np.allclose(s0, v / np.linalg.norm(v))

    def test_3d_packet(self):
        g = make_grid(3, 32)
        w = plane_wave_packet(g, PacketSpec((math.pi,) * 3, (4, 0, 0), "S", 0.3, s_branch=1))
        assert divergence(w).norm() <= 1e-12


class TestRandomBandLimited:
    def test_mode_projection(self, grid64):
        w = random_band_limited(grid64, 4, (2, 10), "P")
        assert project("S", w).norm() <= 1e-12 * w.norm()

    def test_deterministic(self, grid64):
        a = random_band_limited(grid64, 9, (2, 10), "S")
        b = random_band_limited(grid64, 9, (2, 10), "S")
        assert np.array_equal(a.coef, b.coef)

    def test_band_bounds_sobolev_ratio(self, grid64):
        w = random_band_limited(grid64, 1, (8, 16), "full")
        ratio = sobolev_norm(w, 1) / sobolev_norm(w, 0)
        assert math.sqrt(65) <= ratio <= math.sqrt(257)

    def test_empty_band(self, grid64):
        with pytest.raises(ValueError):
            random_band_limited(grid64, 1, (3.2, 3.5), "full")

    def test_real_option(self, grid64):
        w = random_band_limited(grid64, 2, (1, 8), "P", real=True)
        assert np.max(np.abs(w.physical.imag)) <= 1e-13
