"""The elastic operator, P/S projectors, mode blocks and vector identities."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .grid import (
    GridMismatchError,
    GridSpec,
    Multiplier,
    VectorField,
    divergence,
    dot,
    forward,
    gradient,
    inverse,
    laplacian,
    partial,
    pointwise_multiply,
)
from .media import LameField

__all__ = [
    "ModeBlock",
    "LinearOperator",
    "project",
    "projector_multiplier",
    "apply_A",
    "apply_block",
    "identity_residual_1",
    "identity_residual_2",
    "adjoint_residual",
    "operator_handle",
]


class ModeBlock(enum.Enum):
    PP = ("P", "P")
    PS = ("P", "S")
    SP = ("S", "P")
    SS = ("S", "S")

    @property
    def left(self) -> str:
        return self.value[0]

    @property
    def right(self) -> str:
        return self.value[1]


def projector_symbol(xi: np.ndarray, mode: str) -> np.ndarray:
    """sigma_0(Pi_P)_{il} = xi_i xi_l / |xi|^2 (zero at xi = 0), or its complement."""
    k2 = np.sum(xi**2, axis=0)
    safe = np.where(k2 > 0, k2, 1.0)
    p = np.einsum("i...,j...->ij...", xi, xi) / safe
    if mode == "P":
        return p
    if mode == "S":
        eye = np.eye(xi.shape[0]).reshape(xi.shape[:1] * 2 + (1,) * (xi.ndim - 1))
        return eye - p
    raise ValueError(f"mode must be 'P' or 'S', got {mode!r}")


@lru_cache(maxsize=8)
def projector_multiplier(grid: GridSpec, mode: str) -> Multiplier:
    return Multiplier.from_symbol(grid, lambda xi: projector_symbol(xi, mode))


@lru_cache(maxsize=16)
def _unit_xi(grid: GridSpec) -> np.ndarray:
    xi = grid.wavevectors()
    k = np.sqrt(grid.wavenumber_sq())
    out = xi / np.where(k > 0, k, 1.0)
    out.flags.writeable = False
    return out


def project(mode: str, w: VectorField) -> VectorField:
    """Exact Fourier-space P or S projection; the mean mode counts as S."""
    if w.components != w.grid.dimension:
        raise ValueError("projection needs a field with `dimension` components")
    e = _unit_xi(w.grid)
    p = e * np.sum(e * w.coef, axis=0)
    if mode == "P":
        return VectorField(w.grid, p)
    if mode == "S":
        return VectorField(w.grid, w.coef - p)
    raise ValueError(f"mode must be 'P' or 'S', got {mode!r}")


def _check(f: LameField, w: VectorField):
    if f.grid != w.grid:
        raise GridMismatchError(f"medium grid {f.grid} != field grid {w.grid}")


def apply_A(f: LameField, w: VectorField) -> VectorField:
    """(A w)_i = sum_k d_k( mu (d_k w_i + d_i w_k) ) + d_i( lambda div w ).

    Input and every product are 2/3-dealiased, which keeps the discrete
    operator exactly symmetric.
    """
    _check(f, w)
    grid = w.grid
    n = grid.dimension
    xi = grid.wavevectors()
    mask = grid.dealias_mask()
    c = w.coef * mask
    g = inverse(grid, 1j * xi[None, :] * c[:, None])  # g[i, k] = d_k w_i
    div = sum(g[i, i] for i in range(n))
    out = np.zeros_like(c)
    for i in range(n):
        for k in range(i, n):
            s = f.mu * (g[i, k] + g[k, i])
            if i == k:
                s = s + f.lam * div
            sh = forward(grid, s) * mask
            out[i] += 1j * xi[k] * sh
            if k != i:
                out[k] += 1j * xi[i] * sh
    return VectorField(grid, out)


def apply_block(b: ModeBlock, f: LameField, w: VectorField) -> VectorField:
    return project(b.left, apply_A(f, project(b.right, w)))


def apply_diagonal(f: LameField, w: VectorField) -> VectorField:
    """A_PP + A_SS."""
    return apply_block(ModeBlock.PP, f, w) + apply_block(ModeBlock.SS, f, w)


def _grad_dot(W: VectorField, V: VectorField) -> VectorField:
    """Vector field with components sum_i W_i d_k V_i (the 'W . grad V' term)."""
    n = W.grid.dimension
    comps = []
    for k in range(n):
        comps.append(dot(W, partial(V, k)).coef[0])
    return VectorField(W.grid, np.stack(comps))


def _same_grid(V: VectorField, W: VectorField):
    if V.grid != W.grid:
        raise GridMismatchError(f"{V.grid} != {W.grid}")


def identity_residual_1(V: VectorField, W: VectorField) -> float:
    """|| Lap(V.W) - V.Lap W - 2 div(W . grad V) + W.Lap V ||_{L2}."""
    _same_grid(V, W)
    lhs = laplacian(dot(V, W))
    rhs = dot(V, laplacian(W)) + 2 * divergence(_grad_dot(W, V)) - dot(W, laplacian(V))
    return (lhs - rhs).norm()


def identity_residual_2(V: VectorField, W: VectorField) -> float:
    """|| V.grad div W - div(V div W) + div(W div V) - W.grad div V ||_{L2}."""
    _same_grid(V, W)
    divV = divergence(V)
    divW = divergence(W)
    lhs = dot(V, gradient(divW))
    rhs = (
        divergence(pointwise_multiply(divW, V))
        - divergence(pointwise_multiply(divV, W))
        + dot(W, gradient(divV))
    )
    return (lhs - rhs).norm()


@dataclass(frozen=True)
class LinearOperator:
    """A linear map on vector fields together with its (claimed) adjoint."""

    name: str
    apply: Callable[[VectorField], VectorField]
    adjoint: Callable[[VectorField], VectorField]

    def __call__(self, w: VectorField) -> VectorField:
        return self.apply(w)


def operator_handle(name: str, f: LameField | None = None, conj=None) -> LinearOperator:
    """Named operators with the adjoint claimed for them.

    ``A``, ``A_PP``, ``A_SS`` are self-adjoint; ``A_PS`` has adjoint ``A_SP``;
    ``K_PS`` has adjoint ``-K_SP``; ``K`` has adjoint ``-K``.
    """
    from . import conjugation as cj

    def block(b):
        return lambda w: apply_block(b, f, w)

    if name == "A":
        return LinearOperator(name, lambda w: apply_A(f, w), lambda w: apply_A(f, w))
    if name == "A_PP":
        return LinearOperator(name, block(ModeBlock.PP), block(ModeBlock.PP))
    if name == "A_SS":
        return LinearOperator(name, block(ModeBlock.SS), block(ModeBlock.SS))
    if name == "A_PS":
        return LinearOperator(name, block(ModeBlock.PS), block(ModeBlock.SP))
    if name == "A_SP":
        return LinearOperator(name, block(ModeBlock.SP), block(ModeBlock.PS))
    if conj is not None:
        if name == "K_PS":
            return LinearOperator(name, lambda w: cj.apply_K_PS(conj, w), lambda w: -cj.apply_K_SP(conj, w))
        if name == "K_SP":
            return LinearOperator(name, lambda w: cj.apply_K_SP(conj, w), lambda w: -cj.apply_K_PS(conj, w))
        if name == "K":
            return LinearOperator(name, lambda w: cj.apply_K(conj, w), lambda w: -cj.apply_K(conj, w))
    raise ValueError(f"unsupported operator handle {name!r}")


def adjoint_residual(op: LinearOperator, w: VectorField, v: VectorField) -> float:
    """|<Op w, v> - <w, Op^dagger v>| for the adjoint claimed by ``op``."""
    if not isinstance(op, LinearOperator):
        raise TypeError(f"unsupported operator handle {op!r}")
    return abs(op.apply(w).inner(v) - w.inner(op.adjoint(v)))
