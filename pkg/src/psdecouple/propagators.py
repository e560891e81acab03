"""Time evolution for the elastic system and its decoupled mode equations.

All solvers integrate the first-order system (w, w_t)' = (w_t, B w + G(t))
with classical RK4, B being A, A_PP, A_SS or A_PP + A_SS.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .conjugation import ConjugationOperator, ConvergenceError, apply_K, invert_I_plus_K
from .grid import GridMismatchError, VectorField
from .media import LameField
from .operators import ModeBlock, apply_A, apply_block, project

__all__ = [
    "CauchyData",
    "Trajectory",
    "VolterraResult",
    "CFLError",
    "NumericalError",
    "ModePurityError",
    "cfl_limit",
    "reference_solve",
    "mode_solve",
    "volterra_solve",
    "propagator_component",
    "HermiteForcing",
]

CFL_FACTOR = 0.5
PURITY_TOL = 1e-10

Forcing = Callable[[float], VectorField]


class CFLError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class ModePurityError(ValueError):
    pass


@dataclass(frozen=True)
class CauchyData:
    f: VectorField
    g: VectorField

    def __post_init__(self):
        if self.f.grid != self.g.grid:
            raise GridMismatchError("Cauchy data on different grids")

    @classmethod
    def displacement(cls, f: VectorField) -> "CauchyData":
        return cls(f, VectorField.zeros(f.grid, f.components))

    @classmethod
    def velocity(cls, g: VectorField) -> "CauchyData":
        return cls(VectorField.zeros(g.grid, g.components), g)


@dataclass
class Trajectory:
    times: np.ndarray
    displacements: list[VectorField]
    velocities: list[VectorField]
    dt: float
    energy_drift: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def final(self) -> tuple[VectorField, VectorField]:
        return self.displacements[-1], self.velocities[-1]

    def map(self, fn: Callable[[VectorField], VectorField]) -> "Trajectory":
        return Trajectory(
            self.times.copy(),
            [fn(w) for w in self.displacements],
            [fn(v) for v in self.velocities],
            self.dt,
            self.energy_drift,
            dict(self.diagnostics),
        )


def cfl_limit(f: LameField) -> float:
    return CFL_FACTOR * f.grid.spacing / f.max_speed()


def _energy(op, w: VectorField, v: VectorField) -> float:
    return v.norm() ** 2 - op(w).inner(w).real


def _integrate(op, data: CauchyData, t0: float, dt: float, stride: int,
               forcing: Optional[Forcing] = None, f: LameField | None = None) -> Trajectory:
    if dt <= 0:
        raise ValueError("dt must be positive; the sign of t0 sets the direction")
    if stride < 1:
        raise ValueError("sample_stride must be >= 1")
    if f is not None and dt > cfl_limit(f) * (1 + 1e-12):
        raise CFLError(f"dt = {dt:g} violates the CFL bound dt <= {cfl_limit(f):.6g} (0.5 h / max sqrt(2 mu + lambda))")
    nsteps = int(round(abs(t0) / dt))
    if not math.isclose(nsteps * dt, abs(t0), rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"t0 = {t0} is not an integer multiple of dt = {dt}")
    h = math.copysign(dt, t0) if t0 != 0 else dt
    grid = data.f.grid
    w = data.f.coef.copy()
    v = data.g.coef.copy()

    def B(u: np.ndarray) -> np.ndarray:
        return op(VectorField(grid, u)).coef

    def G(t: float) -> np.ndarray | float:
        return 0.0 if forcing is None else forcing(t).coef

    times = [0.0]
    ws = [data.f]
    vs = [data.g]
    e0 = _energy(op, data.f, data.g)
    t = 0.0
    for n in range(nsteps):
        k1w = v
        k1v = B(w) + G(t)
        k2w = v + 0.5 * h * k1v
        k2v = B(w + 0.5 * h * k1w) + G(t + 0.5 * h)
        k3w = v + 0.5 * h * k2v
        k3v = B(w + 0.5 * h * k2w) + G(t + 0.5 * h)
        k4w = v + h * k3v
        k4v = B(w + h * k3w) + G(t + h)
        w = w + (h / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        t = (n + 1) * h
        if (n + 1) % stride == 0 or n + 1 == nsteps:
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
                raise NumericalError(f"non-finite state at t = {t:g}")
            times.append(t)
            ws.append(VectorField(grid, w))
            vs.append(VectorField(grid, v))
    e1 = _energy(op, ws[-1], vs[-1])
    drift = abs(e1 - e0) / abs(e0) if e0 != 0 else abs(e1)
    return Trajectory(np.array(times), ws, vs, dt, drift if forcing is None else float("nan"))


def reference_solve(f: LameField, data: CauchyData, t0: float, dt: float, sample_stride: int = 1) -> Trajectory:
    """Solve w_tt = A w on [0, t0] (t0 may be negative)."""
    if data.f.grid != f.grid:
        raise GridMismatchError("data and medium on different grids")
    return _integrate(lambda u: apply_A(f, u), data, t0, dt, sample_stride, f=f)


def _off_mode(mode: str) -> str:
    return "S" if mode == "P" else "P"


def _check_pure(mode: str, w: VectorField, what: str):
    n = w.norm()
    if n == 0:
        return
    off = project(_off_mode(mode), w).norm()
    if off > PURITY_TOL * n:
        raise ModePurityError(f"{what} has off-mode content {off / n:.2e} relative (> {PURITY_TOL:g})")


def mode_solve(mode: str, f: LameField, data: CauchyData, forcing: Optional[Forcing], t0: float, dt: float,
               sample_stride: int = 1) -> Trajectory:
    """Solve (d_t^2 - A_mm) v = G with mode-pure data and forcing, m in {P, S}."""
    if mode not in ("P", "S"):
        raise ValueError(f"mode must be 'P' or 'S', got {mode!r}")
    _check_pure(mode, data.f, "displacement datum")
    _check_pure(mode, data.g, "velocity datum")
    block = ModeBlock.PP if mode == "P" else ModeBlock.SS
    checked = forcing
    if forcing is not None:
        def checked(t: float) -> VectorField:
            g = forcing(t)
            _check_pure(mode, g, f"forcing at t={t:g}")
            return g
    return _integrate(lambda u: apply_block(block, f, u), data, t0, dt, sample_stride, checked, f=f)


def _diagonal_solve(f: LameField, data: CauchyData, forcing: Optional[Forcing], t0: float, dt: float) -> Trajectory:
    """mode_solve(P) + mode_solve(S) in a single integration, for (A_PP + A_SS)."""
    def op(u: VectorField) -> VectorField:
        return apply_block(ModeBlock.PP, f, u) + apply_block(ModeBlock.SS, f, u)

    return _integrate(op, data, t0, dt, 1, forcing, f=f)


class HermiteForcing:
    """Evaluates G(v(t)) for a trajectory stored at every step, using cubic
    Hermite interpolation from (v, v_t) between samples. Recent evaluations
    are memoized since RK4 asks for each midpoint twice."""

    def __init__(self, traj: Trajectory, fn: Callable[[VectorField], VectorField]):
        self.traj = traj
        self.fn = fn
        self._cache: dict[float, VectorField] = {}
        self.evaluations = 0

    def state(self, t: float) -> VectorField:
        times = self.traj.times
        h = times[1] - times[0] if len(times) > 1 else 1.0
        s = t / h
        n = int(math.floor(s + 1e-9))
        n = min(max(n, 0), len(times) - 1)
        theta = s - n
        if abs(theta) < 1e-9 or n == len(times) - 1:
            return self.traj.displacements[n]
        w0, w1 = self.traj.displacements[n], self.traj.displacements[n + 1]
        v0, v1 = self.traj.velocities[n], self.traj.velocities[n + 1]
        th2, th3 = theta * theta, theta**3
        h00 = 2 * th3 - 3 * th2 + 1
        h10 = th3 - 2 * th2 + theta
        h01 = -2 * th3 + 3 * th2
        h11 = th3 - th2
        return VectorField(
            w0.grid, h00 * w0.coef + (h10 * h) * v0.coef + h01 * w1.coef + (h11 * h) * v1.coef
        )

    def __call__(self, t: float) -> VectorField:
        key = round(t, 12)
        if key not in self._cache:
            if len(self._cache) > 4:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = self.fn(self.state(t))
            self.evaluations += 1
        return self._cache[key]


@dataclass
class VolterraResult:
    v: Trajectory
    w: Trajectory
    iterations: int
    increments: list[float]
    converged: bool

    @property
    def ratios(self) -> list[float]:
        inc = self.increments
        return [inc[j + 1] / inc[j] for j in range(len(inc) - 1) if inc[j] > 0]


def defect_operator(f: LameField, c: ConjugationOperator, tol: float = 1e-13) -> Callable[[VectorField], VectorField]:
    """R v = (I+K) A (I+K)^{-1} v - (A_PP + A_SS) v; R_P = Pi_P R, R_S = Pi_S R."""
    def R(v: VectorField) -> VectorField:
        w = invert_I_plus_K(c, v, tol)
        Aw = apply_A(f, w)
        out = Aw + apply_K(c, Aw)
        return out - apply_block(ModeBlock.PP, f, v) - apply_block(ModeBlock.SS, f, v)

    return R


def volterra_solve(f: LameField, c: ConjugationOperator, data: CauchyData, t0: float, dt: float,
                   max_iter: int = 20, tol: float = 1e-9) -> VolterraResult:
    """Solve the conjugated system by Picard iteration of its Volterra form.

    v = (I+K) w satisfies (d_t^2 - A_PP - A_SS) v = R v with data (I+K)(f, g).
    Iterate v_{j+1} = free evolution + Duhamel(R v_j) until
    sup_t ||v_{j+1}(t) - v_j(t)||_{L2} <= tol ||v_0||; then w = (I+K)^{-1} v.
    """
    if c.lame is not f:
        raise ValueError("conjugation operator built for a different medium")
    ft = data.f + apply_K(c, data.f)
    gt = data.g + apply_K(c, data.g)
    tilde = CauchyData(ft, gt)
    R = defect_operator(f, c)
    v = _diagonal_solve(f, tilde, None, t0, dt)
    scale = max(max(u.norm() for u in v.displacements), 1e-300)
    increments: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        v_new = _diagonal_solve(f, tilde, HermiteForcing(v, R), t0, dt)
        diff = max((a - b).norm() for a, b in zip(v_new.displacements, v.displacements)) / scale
        increments.append(diff)
        v = v_new
        if diff <= tol:
            converged = True
            break
    if not converged:
        rate = increments[-1] / increments[-2] if len(increments) > 1 and increments[-2] > 0 else float("nan")
        raise ConvergenceError(
            f"Volterra iteration not converged in {max_iter} iterations "
            f"(last increment {increments[-1]:.2e}, contraction estimate {rate:.3f})"
        )
    w = v.map(lambda u: invert_I_plus_K(c, u, 1e-14))
    w.energy_drift = float("nan")
    return VolterraResult(v, w, it, increments, converged)


def propagator_component(b: ModeBlock, kind: str, f: LameField, datum: VectorField, t0: float, dt: float,
                         sample_stride: int = 1) -> Trajectory:
    """c_{left,right}(t) datum (kind='cosine') or s_{left,right}(t) datum (kind='sine')."""
    right = project(b.right, datum)
    if kind == "cosine":
        data = CauchyData.displacement(right)
    elif kind == "sine":
        data = CauchyData.velocity(right)
    else:
        raise ValueError(f"kind must be 'cosine' or 'sine', got {kind!r}")
    traj = reference_solve(f, data, t0, dt, sample_stride)
    return traj.map(lambda u: project(b.left, u))
