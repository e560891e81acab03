"""Lame parameter fields and probe wavefields."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .grid import GridSpec, VectorField

__all__ = [
    "Constant",
    "SmoothBump",
    "C11Radial",
    "LameField",
    "LameReport",
    "PositivityError",
    "PacketSpec",
    "make_lame_field",
    "validate_lame",
    "plane_wave_packet",
    "random_band_limited",
    "polarization_vector",
    "c11_estimates",
]


class PositivityError(ValueError):
    """A Lame positivity constraint fails somewhere on the grid."""


@dataclass(frozen=True)
class Constant:
    mu0: float = 1.0
    lam0: float = 1.0


@dataclass(frozen=True)
class SmoothBump:
    """Compactly supported C-infinity bumps added to constant (mu0, lam0).

    Each bump is ``a * exp(1 - 1/(1 - rho**2))`` with ``rho = |x - c| / width``.
    ``lambda_amplitudes`` defaults to ``amplitudes``.
    """

    mu0: float = 1.0
    lam0: float = 1.0
    amplitudes: Sequence[float] = (0.3,)
    widths: Sequence[float] = (1.2,)
    centers: Sequence[Sequence[float]] = ((math.pi, math.pi),)
    lambda_amplitudes: Sequence[float] | None = None


@dataclass(frozen=True)
class C11Radial:
    """Radial profiles ``a * (1 - rho**2)**2`` for rho < 1, zero outside.

    Value and first derivative match at rho = 1 while the second radial
    derivative jumps by ``8 a / radius**2``: C^{1,1} but not C^2.
    """

    mu0: float = 1.0
    lam0: float = 1.0
    amplitudes: Sequence[float] = (0.3,)
    radii: Sequence[float] = (math.pi / 4,)
    centers: Sequence[Sequence[float]] = ((math.pi, math.pi),)
    lambda_amplitudes: Sequence[float] | None = None


Family = Union[Constant, SmoothBump, C11Radial]


@dataclass(frozen=True, eq=False)
class LameField:
    grid: GridSpec
    mu: np.ndarray
    lam: np.ndarray
    family: Family
    c11_norms: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.mu, self.lam):
            if arr.shape != self.grid.shape:
                raise ValueError("Lame field shape does not match grid")
            if np.iscomplexobj(arr):
                raise ValueError("Lame parameters must be real")
            arr.flags.writeable = False

    @property
    def name(self) -> str:
        return type(self.family).__name__.lower()

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.mu) == 0 and np.ptp(self.lam) == 0)

    def max_speed(self) -> float:
        return float(np.sqrt(np.max(2 * self.mu + self.lam)))


@dataclass(frozen=True)
class LameReport:
    min_mu: float
    min_mu_plus_lambda: float
    min_p_modulus: float
    c11_norms: dict


def _bump(rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    inside = rho < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho[inside] ** 2))
    return out


def _c11_profile(rho: np.ndarray) -> np.ndarray:
    return np.where(rho < 1.0, (1.0 - np.minimum(rho, 1.0) ** 2) ** 2, 0.0)


def _radial_sum(grid, profile, amplitudes, radii, centers) -> np.ndarray:
    x = grid.coordinates()
    total = np.zeros(grid.shape)
    if not (len(amplitudes) == len(radii) == len(centers)):
        raise ValueError("amplitudes, radii and centers must have equal length")
    for a, r, c in zip(amplitudes, radii, centers):
        c = np.asarray(c, dtype=float)
        if c.shape != (grid.dimension,):
            raise ValueError(f"center {tuple(c)} has wrong dimension")
        if r <= 0:
            raise ValueError("bump radius must be positive")
        if np.any(c - r <= 0) or np.any(c + r >= grid.period):
            raise ValueError(f"bump at {tuple(c)} with radius {r} touches the periodic seam")
        rho = np.sqrt(sum((x[i] - c[i]) ** 2 for i in range(grid.dimension))) / r
        total += a * profile(rho)
    return total


def c11_estimates(grid: GridSpec, u: np.ndarray) -> dict:
    """Finite-difference sup norms of u, its gradient and the gradient's Lipschitz constant."""
    h = grid.spacing
    grads = [(np.roll(u, -1, axis=k) - np.roll(u, 1, axis=k)) / (2 * h) for k in range(grid.dimension)]
    grad_sup = float(np.max(np.sqrt(sum(g**2 for g in grads))))
    lip = 0.0
    for g in grads:
        for k in range(grid.dimension):
            lip = max(lip, float(np.max(np.abs(np.roll(g, -1, axis=k) - g))) / h)
    return {"sup": float(np.max(np.abs(u))), "grad_sup": grad_sup, "grad_lipschitz": lip}


def make_lame_field(grid: GridSpec, family: Family) -> LameField:
    if isinstance(family, Constant):
        mu = np.full(grid.shape, float(family.mu0))
        lam = np.full(grid.shape, float(family.lam0))
    elif isinstance(family, (SmoothBump, C11Radial)):
        if isinstance(family, SmoothBump):
            profile, radii = _bump, family.widths
        else:
            profile, radii = _c11_profile, family.radii
        lam_amp = family.amplitudes if family.lambda_amplitudes is None else family.lambda_amplitudes
        mu = family.mu0 + _radial_sum(grid, profile, family.amplitudes, radii, family.centers)
        lam = family.lam0 + _radial_sum(grid, profile, lam_amp, radii, family.centers)
    else:
        raise TypeError(f"unknown medium family {family!r}")
    norms = {"mu": c11_estimates(grid, mu), "lambda": c11_estimates(grid, lam)}
    f = LameField(grid, mu, lam, family, norms)
    validate_lame(f)
    return f


def validate_lame(f: LameField) -> LameReport:
    report = LameReport(
        min_mu=float(np.min(f.mu)),
        min_mu_plus_lambda=float(np.min(f.mu + f.lam)),
        min_p_modulus=float(np.min(2 * f.mu + f.lam)),
        c11_norms=f.c11_norms,
    )
    failures = [
        f"min({name}) = {value:g} <= 0"
        for name, value in [
            ("mu", report.min_mu),
            ("mu + lambda", report.min_mu_plus_lambda),
            ("2 mu + lambda", report.min_p_modulus),
        ]
        if not value > 0
    ]
    if failures:
        raise PositivityError("positivity fails: " + "; ".join(failures))
    return report


@dataclass(frozen=True)
class PacketSpec:
    """Gaussian packet; ``k`` is the integer carrier index vector."""

    center: Sequence[float]
    k: Sequence[int]
    polarization: str = "P"
    envelope_width: float = 2 * math.pi / 32
    s_branch: int = 0

    def __post_init__(self):
        if self.polarization not in ("P", "S"):
            raise ValueError("polarization must be 'P' or 'S'")
        if np.linalg.norm(self.k) < 1:
            raise ValueError("carrier must satisfy |k| >= 1")
        if not self.envelope_width > 0:
            raise ValueError("envelope width must be positive")


def polarization_vector(k: Sequence[float], polarization: str, s_branch: int = 0) -> np.ndarray:
    """Unit polarization: k/|k| for P; for S the first coordinate vector not
    parallel to k, orthogonalized against k (branch 1 in 3D takes k x that)."""
    k = np.asarray(k, dtype=float)
    khat = k / np.linalg.norm(k)
    if polarization == "P":
        return khat
    for e in np.eye(len(k)):
        v = e - (e @ khat) * khat
        if np.linalg.norm(v) > 1e-8:
            v = v / np.linalg.norm(v)
            break
    if s_branch == 0:
        return v
    if len(k) == 3 and s_branch == 1:
        return np.cross(khat, v)
    raise ValueError(f"invalid S branch {s_branch} in dimension {len(k)}")


def _periodic_offset(grid: GridSpec, center) -> np.ndarray:
    x = grid.coordinates()
    L = grid.period
    return np.stack([(x[i] - center[i] + L / 2) % L - L / 2 for i in range(grid.dimension)])


def plane_wave_packet(grid: GridSpec, spec: PacketSpec) -> VectorField:
    """Unit-L2 polarized packet, exactly projected onto its mode."""
    from .operators import project

    center = np.asarray(spec.center, dtype=float)
    if center.shape != (grid.dimension,) or len(spec.k) != grid.dimension:
        raise ValueError("packet center and carrier must match the grid dimension")
    if np.max(np.abs(spec.k)) > grid.dealias_cutoff:
        raise ValueError("carrier beyond the dealiased band")
    d = _periodic_offset(grid, center)
    envelope = np.exp(-np.sum(d**2, axis=0) / (2 * spec.envelope_width**2))
    x = grid.coordinates()
    xi = np.asarray(spec.k, dtype=float) * grid.fundamental
    phase = np.exp(1j * np.tensordot(xi, x, axes=1))
    pol = polarization_vector(spec.k, spec.polarization, spec.s_branch)
    values = pol[(slice(None),) + (None,) * grid.dimension] * (envelope * phase)

    mass = envelope**2
    strip = np.zeros(grid.shape, dtype=bool)
    for i in range(grid.dimension):
        strip |= (x[i] < grid.period / 4) | (x[i] > 3 * grid.period / 4)
    if mass[strip].sum() > 1e-8 * mass.sum():
        raise ValueError("packet envelope too wide: mass near the periodic seam exceeds 1e-8")

    w = project(spec.polarization, VectorField.from_physical(grid, values))
    return w * (1.0 / w.norm())


def random_band_limited(
    grid: GridSpec,
    seed: int,
    band: tuple[float, float],
    mode: str = "full",
    components: int | None = None,
    real: bool = False,
) -> VectorField:
    """Unit-L2 random field with coefficients supported in ``band[0] <= |xi| <= band[1]``."""
    from .operators import project

    if mode not in ("P", "S", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    n = grid.dimension if components is None else components
    if mode != "full" and n != grid.dimension:
        raise ValueError("mode projection needs `dimension` components")
    kmag = np.sqrt(grid.wavenumber_sq())
    support = (kmag >= band[0]) & (kmag <= band[1]) & grid.dealias_mask()
    if not support.any():
        raise ValueError(f"band {band} contains no represented wavevectors")
    rng = np.random.default_rng(seed)
    coef = (rng.standard_normal((n, *grid.shape)) + 1j * rng.standard_normal((n, *grid.shape))) * support
    w = VectorField(grid, coef)
    if real:
        w = VectorField.from_physical(grid, w.physical.real)
    if mode != "full":
        w = project(mode, w)
    norm = w.norm()
    if norm == 0:
        raise ValueError("random field vanished after projection")
    return w * (1.0 / norm)
