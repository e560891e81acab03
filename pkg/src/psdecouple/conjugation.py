"""The order -1 conjugation operator K = K_PS + K_SP.

    K_PS w = 2 Phi(D) Lap^{-1} grad( b . Pi_S w ),   b = grad(mu) / (mu + lambda)
    K_SP   = -K_PS^*

Phi is a radial cutoff vanishing for |xi| <= M and equal to one for |xi| >= 2M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import GridMismatchError, GridSpec, Multiplier, VectorField, forward, inverse, inverse_laplacian_symbol
from .media import LameField, PositivityError, validate_lame
from .operators import ModeBlock, apply_A, apply_block, project, projector_symbol

__all__ = [
    "ConjugationOperator",
    "ConvergenceError",
    "CalibrationError",
    "cutoff_symbol",
    "make_conjugation",
    "apply_K_PS",
    "apply_K_SP",
    "apply_K",
    "estimate_K_norms",
    "calibrate_M",
    "invert_I_plus_K",
    "conjugation_remainder",
    "composition_defect",
    "k_ps_symbol",
    "a_ps_principal_symbol",
    "symbol_check_K_PS",
]

CALIBRATION_TARGET = 0.45
POWER_ITERATIONS = 30
CALIBRATION_SEED = 20240917


class ConvergenceError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    pass


def cutoff_symbol(xi: np.ndarray, M: float) -> np.ndarray:
    """Phi(xi): 0 below M, 1 above 2M, blended by 3t^2 - 2t^3 with t = |xi|/M - 1."""
    t = np.clip(np.sqrt(np.sum(np.asarray(xi) ** 2, axis=0)) / M - 1.0, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True, eq=False)
class ConjugationOperator:
    lame: LameField
    M: float
    b: VectorField
    phi: Multiplier

    @property
    def grid(self) -> GridSpec:
        return self.lame.grid


def make_conjugation(f: LameField, M: float) -> ConjugationOperator:
    if not M >= 1:
        raise ValueError(f"cutoff threshold M must be >= 1, got {M}")
    validate_lame(f)
    grid = f.grid
    if f.is_constant:
        b = VectorField.zeros(grid, grid.dimension)
    else:
        mu_hat = forward(grid, f.mu)
        grad_mu = inverse(grid, 1j * grid.wavevectors() * mu_hat).real
        b = VectorField.from_physical(grid, grad_mu / (f.mu + f.lam))
    phi = Multiplier.from_symbol(grid, lambda xi: cutoff_symbol(xi, M))
    return ConjugationOperator(f, float(M), b, phi)


def _check(c: ConjugationOperator, w: VectorField):
    if c.grid != w.grid:
        raise GridMismatchError(f"conjugation grid {c.grid} != field grid {w.grid}")


def apply_K_PS(c: ConjugationOperator, w: VectorField) -> VectorField:
    _check(c, w)
    grid = w.grid
    mask = grid.dealias_mask()
    u = project("S", w)
    s = forward(grid, np.sum(c.b.physical * inverse(grid, u.coef * mask), axis=0)) * mask
    xi = grid.wavevectors()
    scalar = 2.0 * c.phi.values * inverse_laplacian_symbol(grid) * s
    return VectorField(grid, 1j * xi * scalar)


def apply_K_SP(c: ConjugationOperator, w: VectorField) -> VectorField:
    """-K_PS^* = 2 Pi_S( b Lap^{-1} div Phi(D) w ), dealiased as the adjoint of K_PS."""
    _check(c, w)
    grid = w.grid
    mask = grid.dealias_mask()
    xi = grid.wavevectors()
    q = c.phi.values * inverse_laplacian_symbol(grid) * np.sum(1j * xi * w.coef, axis=0) * mask
    prod = forward(grid, c.b.physical * inverse(grid, q)) * mask
    return project("S", VectorField(grid, 2.0 * prod))


def apply_K(c: ConjugationOperator, w: VectorField) -> VectorField:
    return apply_K_PS(c, w) + apply_K_SP(c, w)


def estimate_K_norms(c: ConjugationOperator, s_list: Sequence[float], iterations: int = POWER_ITERATIONS,
                     seed: int = CALIBRATION_SEED) -> dict[float, float]:
    from .analysis import operator_norm_estimate
    from .operators import operator_handle

    op = operator_handle("K", c.lame, c)
    return {float(s): operator_norm_estimate(op, c.grid, s, seed=seed, iterations=iterations) for s in s_list}


def calibrate_M(f: LameField, s_list: Sequence[float] = (-1.0, 0.0, 1.0)) -> float:
    """Smallest M in 2, 4, 8, ... with power-iteration ||K||_{H^s} <= 0.45 for all s."""
    validate_lame(f)
    grid = f.grid
    limit = 0.5 * grid.nyquist * grid.fundamental
    M = 2.0
    while True:
        if M > limit:
            raise CalibrationError(f"M = {M:g} exceeds half the Nyquist frequency {limit:g}; medium too rough for grid")
        c = make_conjugation(f, M)
        if f.is_constant:
            return M
        norms = estimate_K_norms(c, s_list)
        if max(norms.values()) <= CALIBRATION_TARGET:
            return M
        M *= 2


def invert_I_plus_K(c: ConjugationOperator, v: VectorField, tol: float = 1e-12,
                    history: list | None = None, max_terms: int = 50) -> VectorField:
    """Neumann series sum_j (-K)^j v, truncated once an increment is <= tol ||v||."""
    _check(c, v)
    vnorm = v.norm()
    w = v
    term = v
    if vnorm == 0:
        return w
    for _ in range(max_terms):
        term = -apply_K(c, term)
        tn = term.norm()
        if history is not None:
            history.append(tn / vnorm)
        w = w + term
        if tn <= tol * vnorm:
            return w
    raise ConvergenceError(f"Neumann series did not converge in {max_terms} terms; recalibrate M")


def conjugation_remainder(c: ConjugationOperator, w: VectorField, include_K: bool = True) -> VectorField:
    """(K_PS A_SS - A_PP K_PS + A_PS) w; with include_K=False just A_PS w."""
    _check(c, w)
    f = c.lame
    out = apply_block(ModeBlock.PS, f, w)
    if include_K:
        out = out + apply_K_PS(c, apply_block(ModeBlock.SS, f, w))
        out = out - apply_block(ModeBlock.PP, f, apply_K_PS(c, w))
    return out


def composition_defect(c: ConjugationOperator, w: VectorField) -> VectorField:
    """Difference of the two sides of the K_PS A_SS composition identity:

        Phi Lap^{-1} grad( V . (Lap - grad div)(mu Pi_S w) ) - Phi grad( V . (mu Pi_S w) )

    with V = b.
    """
    _check(c, w)
    grid = w.grid
    mask = grid.dealias_mask()
    xi = grid.wavevectors()
    k2 = grid.wavenumber_sq()
    W = forward(grid, c.lame.mu * inverse(grid, project("S", w).coef * mask)) * mask
    lapW = -k2 * W
    graddivW = xi * np.sum(-xi * W, axis=0)  # grad div W symbol: -xi xi^T
    inner = lapW - graddivW
    s1 = forward(grid, np.sum(c.b.physical * inverse(grid, inner), axis=0)) * mask
    s2 = forward(grid, np.sum(c.b.physical * inverse(grid, W), axis=0)) * mask
    lhs = c.phi.values * inverse_laplacian_symbol(grid) * s1
    rhs = c.phi.values * s2
    return VectorField(grid, 1j * xi * (lhs - rhs))


def _interpolate(grid: GridSpec, coef: np.ndarray, x: Sequence[float]) -> np.ndarray:
    """Trigonometric interpolation of coefficient arrays at an arbitrary point."""
    phase = np.exp(1j * np.tensordot(np.asarray(x, dtype=float), grid.wavevectors(), axes=1))
    lead = coef.ndim - grid.dimension
    return np.sum(coef * phase, axis=tuple(range(lead, coef.ndim)))


def k_ps_symbol(c: ConjugationOperator, x: Sequence[float], xi: Sequence[float]) -> np.ndarray:
    """Frozen-coefficient symbol of the implemented K_PS at (x, xi):
    2 Phi(xi) (-1/|xi|^2) i xi (b(x)^T sigma_0(Pi_S)(xi))."""
    xi = np.asarray(xi, dtype=float)
    b = _interpolate(c.grid, c.b.coef, x).real
    k2 = xi @ xi
    ps = projector_symbol(xi.reshape(-1, 1), "S")[:, :, 0]
    return 2.0 * cutoff_symbol(xi.reshape(-1, 1), c.M)[0] * (-1.0 / k2) * np.outer(1j * xi, b @ ps)


def a_ps_principal_symbol(f: LameField, x: Sequence[float], xi: Sequence[float]) -> np.ndarray:
    """sigma_1(A_PS)(x, xi) = 2 i xi (grad mu(x)^T sigma_0(Pi_S)(xi)), with
    sigma_0(Pi_S) = I - xi xi^T / |xi|^2 written out directly."""
    grid = f.grid
    xi = np.asarray(xi, dtype=float)
    grad_mu = _interpolate(grid, 1j * grid.wavevectors() * forward(grid, f.mu), x).real
    ps = np.eye(len(xi)) - np.outer(xi, xi) / (xi @ xi)
    return 2j * np.outer(xi, grad_mu @ ps)


def symbol_check_K_PS(c: ConjugationOperator, x: Sequence[float], xi: Sequence[float], magnitude: float) -> float:
    """Norm of sigma_{-1}(K_PS) + sigma_1(A_PS) / ((mu + lambda)(x) |xi|^2) at xi = magnitude * xi/|xi|."""
    if magnitude < 2 * c.M:
        raise ValueError(f"|xi| = {magnitude} below the open cutoff 2M = {2 * c.M}")
    direction = np.asarray(xi, dtype=float)
    xi_vec = magnitude * direction / np.linalg.norm(direction)
    f = c.lame
    mpl = _interpolate(c.grid, forward(c.grid, f.mu + f.lam), x).real
    lhs = k_ps_symbol(c, x, xi_vec)
    rhs = -a_ps_principal_symbol(f, x, xi_vec) / (mpl * (xi_vec @ xi_vec))
    return float(np.linalg.norm(lhs - rhs))
