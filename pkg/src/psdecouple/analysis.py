"""Operator-norm estimation, log-log slope fits and frequency sweeps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .conjugation import ConjugationOperator, apply_K, apply_K_PS, composition_defect, conjugation_remainder
from .grid import GridSpec, VectorField, bracket, sobolev_norm
from .media import LameField, PacketSpec, plane_wave_packet
from .operators import LinearOperator, ModeBlock, apply_block, project
from .propagators import CauchyData, mode_solve, reference_solve

__all__ = [
    "SweepRow",
    "SlopeFit",
    "SweepGeometry",
    "FLOOR",
    "DEFAULT_CARRIERS",
    "fit_loglog_slope",
    "operator_norm_estimate",
    "coupling_sweep",
    "remainder_sweep",
    "block_order_sweep",
]

FLOOR = 1e-12
DEFAULT_CARRIERS = (8, 16, 32, 64)


class InsufficientPointsError(ValueError):
    pass


@dataclass
class SweepRow:
    carrier: int
    norms: dict[str, float]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.norms.items():
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"invalid norm {name} = {value}")


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    max_residual: float
    points_used: int
    below_floor: tuple[int, ...] = ()

    def __post_init__(self):
        if self.points_used < 3:
            raise InsufficientPointsError("a slope fit needs at least 3 points")


def fit_loglog_slope(rows: Sequence[SweepRow], quantity: str, min_carrier: float = 0.0) -> SlopeFit:
    """Least squares of log(value) against log(carrier).

    Rows whose value is at or below FLOOR are excluded and listed in
    ``below_floor``; rows with carrier < min_carrier are ignored.
    """
    ks, vals, floored = [], [], []
    for row in rows:
        if row.carrier < min_carrier:
            continue
        value = row.norms[quantity]
        if value <= FLOOR:
            floored.append(row.carrier)
            continue
        ks.append(row.carrier)
        vals.append(value)
    if len(ks) < 3:
        raise InsufficientPointsError(f"{quantity}: only {len(ks)} usable points (below floor: {floored})")
    x = np.log(np.asarray(ks, dtype=float))
    y = np.log(np.asarray(vals, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return SlopeFit(float(slope), float(intercept), float(np.max(np.abs(resid))), len(ks), tuple(floored))


def operator_norm_estimate(op: LinearOperator | Callable, grid: GridSpec, s: float = 0.0, seed: int = 0,
                           iterations: int = 30, components: int | None = None) -> float:
    """Largest singular value of op on H^s by power iteration on the normal operator.

    With L = <D>^s, iterates x <- B^* B x for B = L op L^{-1}; returns ||B x||
    for the final unit vector x.
    """
    if isinstance(op, LinearOperator):
        apply, adjoint = op.apply, op.adjoint
    else:
        apply = adjoint = op
    n = grid.dimension if components is None else components
    Ls = bracket(grid, s)
    Lsi = 1.0 / Ls
    rng = np.random.default_rng(seed)
    x = VectorField(grid, rng.standard_normal((n, *grid.shape)) + 1j * rng.standard_normal((n, *grid.shape)))
    x = x * (1.0 / x.norm())

    def B(u):
        return VectorField(grid, Ls * apply(VectorField(grid, Lsi * u.coef)).coef)

    def Bstar(u):
        return VectorField(grid, Lsi * adjoint(VectorField(grid, Ls * u.coef)).coef)

    est = 0.0
    for _ in range(iterations):
        y = B(x)
        est = y.norm()
        if not np.isfinite(est):
            raise FloatingPointError("power iteration produced a non-finite value")
        if est == 0.0:
            return 0.0
        z = Bstar(y)
        zn = z.norm()
        if zn == 0.0:
            return 0.0
        x = z * (1.0 / zn)
    return B(x).norm()


@dataclass(frozen=True)
class SweepGeometry:
    """Where the probe packets sit: center, propagation direction, envelope width.

    The default packet sits at the cell center with the widest envelope that
    keeps its boundary-strip mass under the packet tolerance; pair it with a
    medium whose bump is offset from the center (see ``default_medium``).
    """

    center: tuple[float, ...] = (math.pi, math.pi)
    direction: tuple[int, ...] = (1, 0)
    envelope_width: float = 0.37

    def packet(self, grid: GridSpec, carrier: int, polarization: str) -> VectorField:
        k = tuple(int(carrier * d) for d in self.direction)
        return plane_wave_packet(grid, PacketSpec(self.center, k, polarization, self.envelope_width))


def _check_carriers(grid: GridSpec, carriers: Sequence[int], M: float):
    if min(carriers) * grid.fundamental < 2 * M:
        raise ValueError(f"carriers must be >= 2M = {2 * M:g} so that the cutoff is open")
    if max(carriers) > grid.nyquist / 2:
        raise ValueError(f"carrier {max(carriers)} beyond Nyquist/2 = {grid.nyquist // 2}")


def _meta(f: LameField, c: ConjugationOperator | None, t: float | None) -> dict:
    return {
        "grid": f.grid.points_per_axis,
        "medium": f.name,
        "M": None if c is None else c.M,
        "t": t,
    }


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def coupling_sweep(f: LameField, c: ConjugationOperator, mode: str, carriers: Sequence[int] = DEFAULT_CARRIERS,
                   t: float = 0.5, dt: float = 2e-3, geometry: SweepGeometry = SweepGeometry(),
                   diagonal_defect: bool = True, workers: int = 1) -> list[SweepRow]:
    """Evolve a unit pure-mode packet to time t and measure both modes' content.

    Recorded per carrier (m = input mode, o = opposite mode):
    L2_o_content, H1_o_content, L2_o_velocity, L2_m_content, H1_m_content,
    and, when ``diagonal_defect`` is set, H1_diag_defect = ||(c_mm - c_m)(t) w||_{H1}
    and L2_diag_defect_velocity for the time derivatives.
    """
    if mode not in ("P", "S"):
        raise ValueError(f"mode must be 'P' or 'S', got {mode!r}")
    grid = f.grid
    _check_carriers(grid, carriers, c.M)
    other = "S" if mode == "P" else "P"

    def one(k: int) -> SweepRow:
        w0 = geometry.packet(grid, k, mode)
        data = CauchyData.displacement(w0)
        traj = reference_solve(f, data, t, dt, sample_stride=10**9)
        w, v = traj.final()
        wo, wm = project(other, w), project(mode, w)
        norms = {
            f"L2_{other}_content": wo.norm(),
            f"H1_{other}_content": sobolev_norm(wo, 1),
            f"L2_{other}_velocity": project(other, v).norm(),
            f"L2_{mode}_content": wm.norm(),
            f"H1_{mode}_content": sobolev_norm(wm, 1),
        }
        if diagonal_defect:
            free = mode_solve(mode, f, data, None, t, dt, sample_stride=10**9)
            fw, fv = free.final()
            norms["H1_diag_defect"] = sobolev_norm(wm - fw, 1)
            norms["L2_diag_defect_velocity"] = (project(mode, v) - fv).norm()
        norms["energy_drift"] = traj.energy_drift
        return SweepRow(k, norms, {**_meta(f, c, t), "mode": mode})

    return _map(one, list(carriers), workers)


def remainder_sweep(f: LameField, c: ConjugationOperator, carriers: Sequence[int] = DEFAULT_CARRIERS,
                    geometry: SweepGeometry = SweepGeometry(), workers: int = 1) -> list[SweepRow]:
    """Conjugation remainder on unit S packets, with the K-free ablation.

    Records remainder_L2_ratio, ablation_L2_ratio (A_PS alone),
    composition_defect_L2 and K_order = |k| ||K w|| / ||w||.
    """
    grid = f.grid
    _check_carriers(grid, carriers, c.M)

    def one(k: int) -> SweepRow:
        w = geometry.packet(grid, k, "S")
        norms = {
            "remainder_L2_ratio": conjugation_remainder(c, w).norm(),
            "ablation_L2_ratio": conjugation_remainder(c, w, include_K=False).norm(),
            "composition_defect_L2": composition_defect(c, w).norm(),
            "K_order": k * grid.fundamental * apply_K(c, w).norm(),
            "K_PS_order": k * grid.fundamental * apply_K_PS(c, w).norm(),
        }
        return SweepRow(k, norms, _meta(f, c, None))

    return _map(one, list(carriers), workers)


def block_order_sweep(f: LameField, carriers: Sequence[int] = DEFAULT_CARRIERS,
                      geometry: SweepGeometry = SweepGeometry(), workers: int = 1) -> list[SweepRow]:
    """||A_PS w_S|| on S packets and ||A_PP w_P|| on P packets (unit L2)."""
    grid = f.grid

    def one(k: int) -> SweepRow:
        ws = geometry.packet(grid, k, "S")
        wp = geometry.packet(grid, k, "P")
        norms = {
            "A_PS_L2": apply_block(ModeBlock.PS, f, ws).norm(),
            "A_SP_L2": apply_block(ModeBlock.SP, f, wp).norm(),
            "A_PP_L2": apply_block(ModeBlock.PP, f, wp).norm(),
            "A_SS_L2": apply_block(ModeBlock.SS, f, ws).norm(),
            "A_PS_H1_ratio": apply_block(ModeBlock.PS, f, ws).norm() / sobolev_norm(ws, 1),
        }
        return SweepRow(k, norms, _meta(f, None, None))

    return _map(one, list(carriers), workers)
