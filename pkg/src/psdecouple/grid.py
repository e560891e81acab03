"""Periodic grids, Fourier transforms, multipliers and Sobolev norms.

Fields are stored by their Fourier coefficients with the normalization

    w(x) = sum_xi  w_hat(xi) exp(i xi . x),     w_hat = fftn(w) / N_total

so that the discrete L2 norm ``mean |w(x)|**2`` equals ``sum |w_hat|**2``
independently of the resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Union

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "VectorField",
    "Multiplier",
    "make_grid",
    "apply_multiplier",
    "pointwise_multiply",
    "sobolev_norm",
    "dealias",
    "gradient",
    "divergence",
    "curl",
    "inverse_laplacian",
    "bracket",
    "GridMismatchError",
]


class GridMismatchError(ValueError):
    """Raised when two objects living on different grids are combined."""


@dataclass(frozen=True)
class GridSpec:
    dimension: int
    points_per_axis: int
    period: float = 2 * math.pi

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        n = self.points_per_axis
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {n}")
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dimension

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dimension

    @property
    def spacing(self) -> float:
        return self.period / self.points_per_axis

    @property
    def nyquist(self) -> int:
        """Largest represented integer frequency index per axis."""
        return self.points_per_axis // 2

    @property
    def fundamental(self) -> float:
        """Physical wavenumber of index 1."""
        return 2 * math.pi / self.period

    @property
    def dealias_cutoff(self) -> float:
        """Highest integer index kept by the 2/3 rule."""
        return 2.0 * self.nyquist / 3.0

    def index_range(self) -> np.ndarray:
        """Integer DFT indices per axis in FFT order: 0..N/2-1, -N/2..-1."""
        return np.rint(np.fft.fftfreq(self.points_per_axis) * self.points_per_axis).astype(int)

    def wavevectors(self) -> np.ndarray:
        """Physical wavevectors, shape ``(dimension, *shape)``."""
        return _wavevectors(self)

    def wavenumber_sq(self) -> np.ndarray:
        return _wavenumber_sq(self)

    def coordinates(self) -> np.ndarray:
        """Sample points, shape ``(dimension, *shape)``."""
        return _coordinates(self)

    def dealias_mask(self) -> np.ndarray:
        return _dealias_mask(self)


@lru_cache(maxsize=16)
def _wavevectors(grid: GridSpec) -> np.ndarray:
    k1 = grid.index_range() * grid.fundamental
    xi = np.stack(np.meshgrid(*([k1] * grid.dimension), indexing="ij"))
    xi.flags.writeable = False
    return xi


@lru_cache(maxsize=16)
def _wavenumber_sq(grid: GridSpec) -> np.ndarray:
    k2 = np.sum(_wavevectors(grid) ** 2, axis=0)
    k2.flags.writeable = False
    return k2


@lru_cache(maxsize=16)
def _coordinates(grid: GridSpec) -> np.ndarray:
    x1 = np.arange(grid.points_per_axis) * grid.spacing
    x = np.stack(np.meshgrid(*([x1] * grid.dimension), indexing="ij"))
    x.flags.writeable = False
    return x


@lru_cache(maxsize=16)
def _dealias_mask(grid: GridSpec) -> np.ndarray:
    keep1 = np.abs(grid.index_range()) <= grid.dealias_cutoff
    mask = keep1
    for _ in range(grid.dimension - 1):
        mask = np.multiply.outer(mask, keep1)
    mask = np.asarray(mask, dtype=bool)
    mask.flags.writeable = False
    return mask


def make_grid(dimension: int, points_per_axis: int, period: float = 2 * math.pi) -> GridSpec:
    return GridSpec(int(dimension), int(points_per_axis), float(period))


def _axes(grid: GridSpec, leading: int) -> tuple[int, ...]:
    return tuple(range(leading, leading + grid.dimension))


def forward(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Physical samples -> normalized coefficients over the trailing grid axes."""
    lead = values.ndim - grid.dimension
    return sfft.fftn(values, axes=_axes(grid, lead), norm="forward")


def inverse(grid: GridSpec, coef: np.ndarray) -> np.ndarray:
    lead = coef.ndim - grid.dimension
    return sfft.ifftn(coef, axes=_axes(grid, lead), norm="forward")


@dataclass(frozen=True, eq=False)
class VectorField:
    """An n-component complex field on a periodic grid.

    ``coef`` has shape ``(n, *grid.shape)`` and holds Fourier coefficients.
    A scalar field is a VectorField with one component.
    """

    grid: GridSpec
    coef: np.ndarray

    def __post_init__(self):
        if self.coef.shape[1:] != self.grid.shape:
            raise ValueError(f"coefficient shape {self.coef.shape} does not fit grid {self.grid.shape}")
        self.coef.flags.writeable = False

    @classmethod
    def from_physical(cls, grid: GridSpec, values) -> "VectorField":
        values = np.asarray(values, dtype=complex)
        if values.shape == grid.shape:
            values = values[None]
        return cls(grid, forward(grid, values))

    @classmethod
    def from_coefficients(cls, grid: GridSpec, coef) -> "VectorField":
        coef = np.array(coef, dtype=complex)
        if coef.shape == grid.shape:
            coef = coef[None]
        return cls(grid, coef)

    @classmethod
    def zeros(cls, grid: GridSpec, components: int) -> "VectorField":
        return cls(grid, np.zeros((components, *grid.shape), dtype=complex))

    @cached_property
    def physical(self) -> np.ndarray:
        values = inverse(self.grid, self.coef)
        values.flags.writeable = False
        return values

    @property
    def components(self) -> int:
        return self.coef.shape[0]

    def component(self, i: int) -> "VectorField":
        return VectorField(self.grid, self.coef[i : i + 1].copy())

    def _check(self, other: "VectorField"):
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} != {other.grid}")
        if other.components != self.components:
            raise ValueError(f"component mismatch: {self.components} vs {other.components}")

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField(self.grid, self.coef + other.coef)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        return VectorField(self.grid, self.coef - other.coef)

    def __neg__(self) -> "VectorField":
        return VectorField(self.grid, -self.coef)

    def __mul__(self, alpha) -> "VectorField":
        return VectorField(self.grid, alpha * self.coef)

    __rmul__ = __mul__

    def inner(self, other: "VectorField") -> complex:
        """L2 inner product, linear in the first slot."""
        self._check(other)
        return complex(np.vdot(other.coef, self.coef))

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.coef.real**2 + self.coef.imag**2)))


SymbolFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Multiplier:
    """A Fourier multiplier sampled on the wavevectors of ``grid``.

    ``values`` is either shape ``grid.shape`` (scalar symbol acting on each
    component) or ``(m, n, *grid.shape)`` (matrix symbol).
    """

    grid: GridSpec
    values: np.ndarray
    zero_mode_rule: complex | np.ndarray | None = None

    @classmethod
    def from_symbol(cls, grid: GridSpec, symbol: SymbolFn, zero_mode_rule=None) -> "Multiplier":
        xi = grid.wavevectors()
        zero = (0,) * grid.dimension
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.array(symbol(xi), dtype=complex)
        if zero_mode_rule is not None:
            values[(Ellipsis, *zero)] = zero_mode_rule
        if not np.all(np.isfinite(values)):
            raise ValueError("symbol is not finite on the grid; set zero_mode_rule")
        values.flags.writeable = False
        return cls(grid, values, zero_mode_rule)

    @property
    def is_matrix(self) -> bool:
        return self.values.ndim == self.grid.dimension + 2

    def compose(self, other: "Multiplier") -> "Multiplier":
        """Symbol of ``self`` applied after ``other``."""
        if other.grid != self.grid:
            raise GridMismatchError("cannot compose multipliers on different grids")
        if self.is_matrix and other.is_matrix:
            vals = np.einsum("ij...,jk...->ik...", self.values, other.values)
        else:
            vals = self.values * other.values
        return Multiplier(self.grid, vals)


def apply_multiplier(m: Multiplier, w: VectorField) -> VectorField:
    if m.grid != w.grid:
        raise GridMismatchError(f"multiplier grid {m.grid} != field grid {w.grid}")
    if m.is_matrix:
        if m.values.shape[1] != w.components:
            raise ValueError(f"matrix symbol expects {m.values.shape[1]} components, got {w.components}")
        return VectorField(w.grid, np.einsum("ij...,j...->i...", m.values, w.coef))
    return VectorField(w.grid, m.values * w.coef)


ScalarLike = Union[np.ndarray, VectorField]


def dealias(w: VectorField) -> VectorField:
    return VectorField(w.grid, w.coef * w.grid.dealias_mask())


def pointwise_multiply(a: ScalarLike, w: VectorField, dealias: bool = True) -> VectorField:
    """Multiply every component of ``w`` by the scalar field ``a`` in physical space."""
    if isinstance(a, VectorField):
        if a.grid != w.grid:
            raise GridMismatchError(f"{a.grid} != {w.grid}")
        if a.components != 1:
            raise ValueError("multiplier field must be scalar")
        a = a.physical[0]
    elif np.shape(a) != w.grid.shape:
        raise GridMismatchError(f"scalar of shape {np.shape(a)} does not fit grid {w.grid.shape}")
    coef = forward(w.grid, a * w.physical)
    if dealias:
        coef *= w.grid.dealias_mask()
    return VectorField(w.grid, coef)


def sobolev_norm(w: VectorField, s: float) -> float:
    if not -2.0 <= s <= 3.0:
        raise ValueError(f"Sobolev index {s} outside [-2, 3]")
    weight = (1.0 + w.grid.wavenumber_sq()) ** s
    total = float(np.sum(weight * (w.coef.real**2 + w.coef.imag**2)))
    if not np.isfinite(total):
        raise ValueError("non-finite Sobolev norm")
    return math.sqrt(total)


def bracket(grid: GridSpec, s: float) -> np.ndarray:
    """Sampled weight (1 + |xi|^2)^(s/2)."""
    return (1.0 + grid.wavenumber_sq()) ** (0.5 * s)


# Coefficient-level differential operators; these are the multipliers
# i xi_k, div, Delta^{-1} applied without building Multiplier objects.


def gradient(u: VectorField) -> VectorField:
    """Gradient of a scalar field; ``(dimension,)`` components."""
    if u.components != 1:
        raise ValueError("gradient expects a scalar field")
    return VectorField(u.grid, 1j * u.grid.wavevectors() * u.coef[0])


def divergence(w: VectorField) -> VectorField:
    if w.components != w.grid.dimension:
        raise ValueError("divergence expects a field with `dimension` components")
    return VectorField(w.grid, np.sum(1j * w.grid.wavevectors() * w.coef, axis=0)[None])


def curl(w: VectorField) -> VectorField:
    """Scalar curl in 2D, vector curl in 3D."""
    xi = w.grid.wavevectors()
    c = w.coef
    if w.grid.dimension == 2:
        return VectorField(w.grid, (1j * (xi[0] * c[1] - xi[1] * c[0]))[None])
    out = np.stack(
        [
            xi[1] * c[2] - xi[2] * c[1],
            xi[2] * c[0] - xi[0] * c[2],
            xi[0] * c[1] - xi[1] * c[0],
        ]
    )
    return VectorField(w.grid, 1j * out)


def inverse_laplacian_symbol(grid: GridSpec) -> np.ndarray:
    return _inv_lap(grid)


@lru_cache(maxsize=16)
def _inv_lap(grid: GridSpec) -> np.ndarray:
    k2 = grid.wavenumber_sq()
    with np.errstate(divide="ignore"):
        out = np.where(k2 > 0, -1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    out.flags.writeable = False
    return out


def inverse_laplacian(u: VectorField) -> VectorField:
    """Componentwise Delta^{-1} with the mean mode sent to zero."""
    return VectorField(u.grid, u.coef * _inv_lap(u.grid))


def laplacian(u: VectorField) -> VectorField:
    return VectorField(u.grid, -u.grid.wavenumber_sq() * u.coef)


def partial(u: VectorField, k: int) -> VectorField:
    return VectorField(u.grid, 1j * u.grid.wavevectors()[k] * u.coef)


def dot(a: VectorField, b: VectorField, dealias: bool = True) -> VectorField:
    """Pointwise a . b of two vector fields, returned as a scalar field."""
    if a.grid != b.grid:
        raise GridMismatchError(f"{a.grid} != {b.grid}")
    prod = np.sum(a.physical * b.physical, axis=0)
    coef = forward(a.grid, prod)
    if dealias:
        coef *= a.grid.dealias_mask()
    return VectorField(a.grid, coef[None])


def scale(a: VectorField, u: VectorField, dealias: bool = True) -> VectorField:
    """Pointwise vector field ``a`` times scalar field ``u``."""
    if u.components != 1:
        raise ValueError("second argument must be scalar")
    return pointwise_multiply(u.physical[0], a, dealias=dealias)
