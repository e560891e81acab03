import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from psdecouple.grid import VectorField, curl, divergence, gradient, make_grid, sobolev_norm
from psdecouple.media import Constant, SmoothBump, make_lame_field
from psdecouple.operators import (
    ModeBlock,
    adjoint_residual,
    apply_A,
    apply_block,
    identity_residual_1,
    identity_residual_2,
    operator_handle,
    project,
    projector_symbol,
)

from conftest import random_field


def plane(grid, k, amp):
    x = grid.coordinates()
    phase = np.exp(1j * np.tensordot(np.asarray(k, float), x, axes=1))
    return VectorField.from_physical(grid, np.asarray(amp, complex)[:, None, None] * phase)


class TestProjectors:
    @given(seed=st.integers(0, 2**31))
    def test_algebra(self, seed):
        g = make_grid(2, 32)
        w = random_field(g, seed)
        p, s = project("P", w), project("S", w)
        assert (project("P", p) - p).norm() <= 1e-12 * w.norm()
        assert (p + s - w).norm() <= 1e-12 * w.norm()
        assert divergence(s).norm() <= 1e-12 * sobolev_norm(w, 1)
        assert curl(p).norm() <= 1e-12 * sobolev_norm(w, 1)
        assert abs(p.inner(s)) <= 1e-12 * w.norm() ** 2

    def test_3d(self):
        g = make_grid(3, 16)
        w = random_field(g, 3)
        s = project("S", w)
        assert divergence(s).norm() <= 1e-12 * sobolev_norm(w, 1)
        assert curl(project("P", w)).norm() <= 1e-12 * sobolev_norm(w, 1)

    def test_gradient_is_p(self, grid64):
        phi = random_field(grid64, 1, components=1, band=20)
        gphi = gradient(phi)
        assert (project("P", gphi) - gphi).norm() <= 1e-12 * gphi.norm()

    def test_symbol_example(self):
        xi = np.array([3.0, 4.0]).reshape(2, 1)
        p = projector_symbol(xi, "P")[..., 0]
        assert np.allclose(p, np.array([[9, 12], [12, 16]]) / 25)

    def test_mean_mode_is_shear(self, grid64):
        w = VectorField.from_physical(grid64, np.ones((2, 64, 64)))
        assert project("P", w).norm() == 0.0


class TestElasticOperator:
    def test_constant_eigenvalues(self, const64):
        g = const64.grid
        p = plane(g, (1, 0), (1, 0))
        s = plane(g, (1, 0), (0, 1))
        # -(2mu + lambda)|k|^2 = -3 and -mu|k|^2 = -1
        assert (apply_A(const64, p) + 3 * p).norm() <= 1e-12
        assert (apply_A(const64, s) + s).norm() <= 1e-12

    def test_constant_symbol(self, const64):
        g = const64.grid
        k = np.array([3.0, -2.0])
        amp = np.array([0.4, 1.1])
        w = plane(g, k, amp)
        mu, lam = 1.0, 1.0
        sym = -(mu * (k @ k) * np.eye(2) + (mu + lam) * np.outer(k, k))
        expected = plane(g, k, sym @ amp)
        assert (apply_A(const64, w) - expected).norm() <= 1e-12 * np.linalg.norm(sym)

    def test_constant_off_diagonal_blocks_vanish(self, const64):
        w = random_field(const64.grid, 7, band=20)
        for b in (ModeBlock.PS, ModeBlock.SP):
            assert apply_block(b, const64, w).norm() <= 1e-10 * w.norm()

    def test_self_adjoint(self, bump64):
        w, v = random_field(bump64.grid, 1), random_field(bump64.grid, 2)
        a = apply_A(bump64, w).inner(v)
        b = w.inner(apply_A(bump64, v))
        assert abs(a - b) <= 1e-12 * abs(a) + 1e-10

    def test_nonpositive(self, bump64):
        w = random_field(bump64.grid, 4, band=15)
        assert apply_A(bump64, w).inner(w).real < 0

    def test_against_finite_differences(self):
        # smooth real field; compare with a direct finite-difference evaluation on a fine grid
        g = make_grid(2, 128)
        f = make_lame_field(g, SmoothBump(centers=((math.pi + 0.4, math.pi),)))
        x = g.coordinates()
        w = VectorField.from_physical(g, np.stack([np.sin(x[0]) * np.cos(2 * x[1]), np.cos(x[0] + x[1])]))
        got = apply_A(f, w).physical.real
        h = g.spacing
        wp = w.physical.real

        def d(u, k):
            return (np.roll(u, -1, axis=k) - np.roll(u, 1, axis=k)) / (2 * h)

        div = d(wp[0], 0) + d(wp[1], 1)
        ref = np.zeros_like(wp)
        for i in range(2):
            for k in range(2):
                ref[i] += d(f.mu * (d(wp[i], k) + d(wp[k], i)), k)
            ref[i] += d(f.lam * div, i)
        assert np.max(np.abs(got - ref)) <= 0.05 * np.max(np.abs(got))

    def test_grid_mismatch(self, bump64):
        from psdecouple.grid import GridMismatchError

        with pytest.raises(GridMismatchError):
            apply_A(bump64, random_field(make_grid(2, 32), 0))


class TestBlocks:
    def test_blocks_sum_to_A(self, bump64):
        w = random_field(bump64.grid, 5, band=20)
        total = sum((apply_block(b, bump64, w) for b in ModeBlock), VectorField.zeros(bump64.grid, 2))
        assert (total - apply_A(bump64, w)).norm() <= 1e-12 * apply_A(bump64, w).norm()

    def test_block_ranges(self, bump64):
        w = random_field(bump64.grid, 6)
        assert project("S", apply_block(ModeBlock.PS, bump64, w)).norm() <= 1e-12 * w.norm()
        assert project("P", apply_block(ModeBlock.SP, bump64, w)).norm() <= 1e-12 * w.norm()

    def test_ps_adjoint_sp(self, bump64):
        op = operator_handle("A_PS", bump64)
        w, v = random_field(bump64.grid, 8), random_field(bump64.grid, 9)
        assert adjoint_residual(op, w, v) <= 1e-10 * w.norm() * v.norm()

    @pytest.mark.parametrize("name", ["A", "A_PP", "A_SS", "A_SP"])
    def test_adjoint_handles(self, bump64, name):
        op = operator_handle(name, bump64)
        w, v = random_field(bump64.grid, 10), random_field(bump64.grid, 11)
        scale = max(1.0, op(w).norm()) * v.norm()
        assert adjoint_residual(op, w, v) <= 1e-12 * scale

    def test_wrong_claim_detected(self, bump64):
        from psdecouple.operators import LinearOperator

        op = LinearOperator("bad", lambda w: apply_block(ModeBlock.PS, bump64, w),
                            lambda w: apply_block(ModeBlock.PS, bump64, w))
        w, v = random_field(bump64.grid, 1), random_field(bump64.grid, 2)
        assert adjoint_residual(op, w, v) > 1e-3 * w.norm() * v.norm()

    def test_unknown_handle(self, bump64):
        with pytest.raises(ValueError):
            operator_handle("B", bump64)
        with pytest.raises(TypeError):
            adjoint_residual("A", random_field(bump64.grid, 0), random_field(bump64.grid, 1))


class TestIdentities:
    @pytest.mark.parametrize("seed", range(5))
    def test_band_limited_pairs(self, grid64, seed):
        V = random_field(grid64, 100 + seed, band=12)
        W = random_field(grid64, 200 + seed, band=12)
        scale = sobolev_norm(V, 2) * sobolev_norm(W, 2)
        assert identity_residual_1(V, W) <= 1e-10 * scale
        assert identity_residual_2(V, W) <= 1e-10 * scale

    def test_constant_field_examples(self, grid64):
        V = VectorField.from_physical(grid64, np.stack([np.ones(grid64.shape), 2 * np.ones(grid64.shape)]))
        W = random_field(grid64, 3, band=10)
        assert identity_residual_1(V, W) <= 1e-10 * sobolev_norm(W, 2)
        assert identity_residual_2(V, W) <= 1e-10 * sobolev_norm(W, 2)

    def test_3d(self):
        g = make_grid(3, 16)
        V = random_field(g, 1, band=5)
        W = random_field(g, 2, band=5)
        scale = sobolev_norm(V, 2) * sobolev_norm(W, 2)
        assert identity_residual_1(V, W) <= 1e-10 * scale
        assert identity_residual_2(V, W) <= 1e-10 * scale

    def test_residual_is_sensitive(self, grid64):
        # a broken 'identity' (wrong factor) must leave a visible residual
        from psdecouple.grid import dot, divergence as div, laplacian
        from psdecouple.operators import _grad_dot

        V = random_field(grid64, 1, band=10)
        W = random_field(grid64, 2, band=10)
        wrong = laplacian(dot(V, W)) - dot(V, laplacian(W)) - div(_grad_dot(W, V)) + dot(W, laplacian(V))
        assert wrong.norm() > 1e-3 * sobolev_norm(V, 2) * sobolev_norm(W, 2) / 100
