"""Experiment configs, the experiment registry, and CSV/JSON/SVG outputs.

Usage::

    python3 -m psdecouple run config.yaml
    python3 -m psdecouple schema
    python3 -m psdecouple list

Exit codes: 0 all thresholds pass, 1 a threshold fails, 2 usage or config
error, 3 numerical failure. ``PSDECOUPLE_OUTPUT_DIR`` overrides the
configured output directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from . import __version__
from .analysis import (
    FLOOR,
    InsufficientPointsError,
    SlopeFit,
    SweepGeometry,
    SweepRow,
    block_order_sweep,
    coupling_sweep,
    fit_loglog_slope,
    remainder_sweep,
)
from .conjugation import (
    CalibrationError,
    ConvergenceError,
    calibrate_M,
    estimate_K_norms,
    invert_I_plus_K,
    apply_K,
    k_ps_symbol,
    make_conjugation,
    symbol_check_K_PS,
)
from .grid import VectorField, curl, divergence, make_grid, sobolev_norm
from .media import C11Radial, Constant, LameField, PositivityError, SmoothBump, make_lame_field, random_band_limited
from .operators import ModeBlock, adjoint_residual, apply_block, identity_residual_1, identity_residual_2, operator_handle, project
from .propagators import CauchyData, CFLError, NumericalError, mode_solve, propagator_component, reference_solve, volterra_solve

OUTPUT_ENV = "PSDECOUPLE_OUTPUT_DIR"

EXIT_PASS, EXIT_THRESHOLD, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

DEFAULT_BUMP_OFFSET = (0.9, -0.6)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""


# ---------------------------------------------------------------- config


@dataclass
class GridConfig:
    dimension: int = 2
    size: int = 256
    period: float = 2 * math.pi


@dataclass
class MediumConfig:
    """Lame parameters. ``widths`` apply to smooth_bump, ``radii`` to c11_radial.

    ``centers`` defaults to one bump offset by (0.9, -0.6) from the cell
    center (third coordinate centered in 3D).
    """

    family: str = "smooth_bump"
    mu0: float = 1.0
    lam0: float = 1.0
    amplitudes: list = field(default_factory=lambda: [0.3])
    widths: list = field(default_factory=lambda: [1.2])
    radii: list = field(default_factory=lambda: [math.pi / 4])
    centers: Optional[list] = None
    lambda_amplitudes: Optional[list] = None


@dataclass
class ExperimentConfig:
    experiment: str
    grid: GridConfig = field(default_factory=GridConfig)
    medium: MediumConfig = field(default_factory=MediumConfig)
    carriers: list = field(default_factory=lambda: [8, 16, 32, 64])
    t0: float = 0.5
    dt: Optional[float] = None
    M: object = "auto"
    seed: int = 7
    samples: int = 20
    tol: float = 1e-8
    max_iter: int = 30
    workers: int = 1
    output_dir: str = "results"


FIELD_DOCS = {
    "experiment": "name from the experiment registry (see `list`)",
    "grid.dimension": "2 or 3",
    "grid.size": "points per axis, a power of two >= 8",
    "grid.period": "side length L of the periodic cell",
    "medium.family": "constant | smooth_bump | c11_radial",
    "medium.mu0": "background mu",
    "medium.lam0": "background lambda",
    "medium.amplitudes": "mu perturbation amplitude per bump",
    "medium.widths": "support radius per smooth bump",
    "medium.radii": "support radius per c11_radial bump",
    "medium.centers": "bump centers; default offset (0.9, -0.6) from the cell center",
    "medium.lambda_amplitudes": "lambda perturbation amplitudes; default = amplitudes",
    "carriers": "integer carrier wavenumbers |k| for sweeps",
    "t0": "final time of evolutions (negative integrates backward)",
    "dt": "time step; default depends on the experiment (sweeps 2e-3, dispersion 1e-3, volterra 5e-3)",
    "M": "cutoff threshold: 'auto' (calibrated) or a number >= 1",
    "seed": "seed for random fields and sample points",
    "samples": "number of random fields / pairs for algebraic checks",
    "tol": "Volterra stopping tolerance on successive iterates",
    "max_iter": "Volterra iteration cap",
    "workers": "threads for independent sweep points",
    "output_dir": f"where rows.csv, summary.json and plot.svg go; overridden by ${OUTPUT_ENV}",
}

DEFAULT_DT = {"dispersion": 1e-3, "volterra": 5e-3}
SWEEP_DT = 2e-3


def _fill(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{unknown[0]}: unknown key (allowed: {', '.join(sorted(names))})")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        sub = f"{path}.{f.name}" if path else f.name
        if f.name == "grid":
            value = _fill(GridConfig, value, sub)
        elif f.name == "medium":
            value = _fill(MediumConfig, value, sub)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from None


def _number(value, path: str, *, integer: bool = False, positive: bool = False) -> float:
    ok_types = (int,) if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, ok_types):
        kind = "an integer" if integer else "a number"
        raise ConfigError(f"{path}: expected {kind}, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    if positive and value <= 0:
        raise ConfigError(f"{path}: must be positive, got {value}")
    return value


def _float_list(value, path: str) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{path}: expected a non-empty list")
    return [float(_number(v, f"{path}[{i}]")) for i, v in enumerate(value)]


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.experiment not in REGISTRY:
        raise ConfigError(f"experiment: unknown experiment {cfg.experiment!r} (see `list`)")
    g = cfg.grid
    _number(g.dimension, "grid.dimension", integer=True)
    if g.dimension not in (2, 3):
        raise ConfigError(f"grid.dimension: must be 2 or 3, got {g.dimension}")
    _number(g.size, "grid.size", integer=True)
    if g.size < 8 or g.size & (g.size - 1):
        raise ConfigError(f"grid.size: must be a power of two >= 8, got {g.size}")
    g.period = float(_number(g.period, "grid.period", positive=True))

    m = cfg.medium
    if m.family not in ("constant", "smooth_bump", "c11_radial"):
        raise ConfigError(f"medium.family: unknown family {m.family!r}")
    m.mu0 = float(_number(m.mu0, "medium.mu0"))
    m.lam0 = float(_number(m.lam0, "medium.lam0"))
    m.amplitudes = _float_list(m.amplitudes, "medium.amplitudes")
    m.widths = _float_list(m.widths, "medium.widths")
    m.radii = _float_list(m.radii, "medium.radii")
    if m.lambda_amplitudes is not None:
        m.lambda_amplitudes = _float_list(m.lambda_amplitudes, "medium.lambda_amplitudes")
    if m.centers is None:
        c = [g.period / 2 + DEFAULT_BUMP_OFFSET[0], g.period / 2 + DEFAULT_BUMP_OFFSET[1]]
        m.centers = [c + [g.period / 2] * (g.dimension - 2)]
    if not isinstance(m.centers, list):
        raise ConfigError("medium.centers: expected a list of points")
    for i, c in enumerate(m.centers):
        pts = _float_list(c, f"medium.centers[{i}]")
        if len(pts) != g.dimension:
            raise ConfigError(f"medium.centers[{i}]: expected {g.dimension} coordinates")
        m.centers[i] = pts
    if m.family != "constant":
        radii = m.widths if m.family == "smooth_bump" else m.radii
        n = len(m.amplitudes)
        others = {"centers": m.centers, "widths" if m.family == "smooth_bump" else "radii": radii}
        if m.lambda_amplitudes is not None:
            others["lambda_amplitudes"] = m.lambda_amplitudes
        for key, seq in others.items():
            if len(seq) != n:
                raise ConfigError(f"medium.{key}: expected {n} entries to match medium.amplitudes")
        if any(r <= 0 for r in radii):
            raise ConfigError("medium.widths/radii: must be positive")

    if not isinstance(cfg.carriers, list) or not cfg.carriers:
        raise ConfigError("carriers: expected a non-empty list of integers")
    for i, k in enumerate(cfg.carriers):
        _number(k, f"carriers[{i}]", integer=True, positive=True)
    if cfg.carriers != sorted(set(cfg.carriers)):
        raise ConfigError("carriers: must be strictly increasing")
    if max(cfg.carriers) > g.size // 4:
        raise ConfigError(f"carriers: max carrier {max(cfg.carriers)} exceeds Nyquist/2 = {g.size // 4}")
    cfg.t0 = float(_number(cfg.t0, "t0"))
    if cfg.t0 == 0:
        raise ConfigError("t0: must be nonzero")
    if cfg.dt is None:
        cfg.dt = DEFAULT_DT.get(cfg.experiment, SWEEP_DT)
    cfg.dt = float(_number(cfg.dt, "dt", positive=True))
    steps = abs(cfg.t0) / cfg.dt
    if abs(steps - round(steps)) > 1e-9 * steps:
        raise ConfigError(f"dt: t0 = {cfg.t0} is not an integer multiple of dt = {cfg.dt}")
    if cfg.M != "auto":
        M = _number(cfg.M, "M")
        if M < 1:
            raise ConfigError(f"M: must be 'auto' or >= 1, got {M}")
        cfg.M = float(M)
    _number(cfg.seed, "seed", integer=True)
    if cfg.seed < 0:
        raise ConfigError("seed: must be nonnegative")
    _number(cfg.samples, "samples", integer=True, positive=True)
    cfg.tol = float(_number(cfg.tol, "tol", positive=True))
    _number(cfg.max_iter, "max_iter", integer=True, positive=True)
    _number(cfg.workers, "workers", integer=True, positive=True)
    if not isinstance(cfg.output_dir, str) or not cfg.output_dir:
        raise ConfigError("output_dir: expected a path string")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse a YAML (or JSON) document into a validated config with defaults filled."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: malformed document: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a mapping")
    if "experiment" not in data:
        raise ConfigError("experiment: required key missing")
    if data.get("experiment") == "dispersion" and "medium" not in data:
        data = {**data, "medium": {"family": "constant"}}
    return _validate(_fill(ExperimentConfig, data, ""))


def config_schema() -> dict:
    """Field paths with types, defaults and descriptions."""

    def walk(cls, prefix: str, instance) -> dict:
        out = {}
        for f in dataclasses.fields(cls):
            path = f"{prefix}{f.name}"
            value = getattr(instance, f.name)
            if dataclasses.is_dataclass(value):
                out.update(walk(type(value), path + ".", value))
                continue
            out[path] = {"default": value, "description": FIELD_DOCS.get(path, "")}
        return out

    return {"fields": walk(ExperimentConfig, "", ExperimentConfig(experiment="decoupling_sweep")),
            "experiments": sorted(REGISTRY)}


# ---------------------------------------------------------------- experiments


@dataclass
class Check:
    value: float
    low: float
    high: float

    @property
    def passed(self) -> bool:
        return bool(self.low <= self.value <= self.high)


@dataclass
class Outcome:
    rows: list = field(default_factory=list)  # (label, quantity, value)
    slopes: dict = field(default_factory=dict)  # quantity -> (SlopeFit, rows)
    checks: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    M: Optional[float] = None
    t: Optional[float] = None

    def add_sweep(self, rows: list[SweepRow], skip=("energy_drift",)):
        for r in rows:
            for q, v in r.norms.items():
                if q not in skip:
                    self.rows.append((r.carrier, q, v))

    def fit(self, rows: list[SweepRow], quantity: str, low: float, high: float, name: str | None = None,
            min_carrier: float = 0.0):
        fit = fit_loglog_slope(rows, quantity, min_carrier)
        self.slopes[name or quantity] = (fit, [(r.carrier, r.norms[quantity]) for r in rows])
        self.checks[f"slope {name or quantity}"] = Check(fit.slope, low, high)
        return fit


@dataclass
class Context:
    cfg: ExperimentConfig
    runtimes: dict
    _medium: Optional[LameField] = None
    _conj: object = None

    def stage(self, name: str):
        ctx = self

        class _Stage:
            def __enter__(self):
                self.t = time.perf_counter()
                ctx.current = name

            def __exit__(self, *exc):
                ctx.runtimes[name] = round(time.perf_counter() - self.t, 3)
                return False

        return _Stage()

    @property
    def grid(self):
        g = self.cfg.grid
        return make_grid(g.dimension, g.size, g.period)

    def medium(self) -> LameField:
        if self._medium is None:
            with self.stage("medium"):
                self._medium = make_lame_field(self.grid, family_from_config(self.cfg.medium))
        return self._medium

    def conjugation(self):
        if self._conj is None:
            f = self.medium()
            with self.stage("calibrate"):
                M = calibrate_M(f) if self.cfg.M == "auto" else float(self.cfg.M)
                self._conj = make_conjugation(f, M)
        return self._conj

    def geometry(self) -> SweepGeometry:
        g = self.cfg.grid
        d = (1,) + (0,) * (g.dimension - 1)
        return SweepGeometry(center=(g.period / 2,) * g.dimension, direction=d,
                             envelope_width=0.37 * g.period / (2 * math.pi))


def family_from_config(m: MediumConfig):
    centers = tuple(tuple(c) for c in m.centers)
    lam = None if m.lambda_amplitudes is None else tuple(m.lambda_amplitudes)
    if m.family == "constant":
        return Constant(m.mu0, m.lam0)
    if m.family == "smooth_bump":
        return SmoothBump(m.mu0, m.lam0, tuple(m.amplitudes), tuple(m.widths), centers, lam)
    return C11Radial(m.mu0, m.lam0, tuple(m.amplitudes), tuple(m.radii), centers, lam)


def _random(ctx: Context, seed: int, mode: str = "full", band=None) -> VectorField:
    grid = ctx.grid
    if band is None:
        band = (0.0, grid.nyquist * grid.fundamental)
    return random_band_limited(grid, seed, band, mode)


def run_projector_algebra(ctx: Context) -> Outcome:
    out = Outcome()
    worst = {"idempotence": 0.0, "resolution": 0.0, "div_S": 0.0, "curl_P": 0.0}
    for j in range(ctx.cfg.samples):
        w = _random(ctx, ctx.cfg.seed + j)
        p, s = project("P", w), project("S", w)
        h1 = sobolev_norm(w, 1)
        vals = {
            "idempotence": (project("P", p) - p).norm() / w.norm(),
            "resolution": (p + s - w).norm() / w.norm(),
            "div_S": divergence(s).norm() / h1,
            "curl_P": curl(p).norm() / h1,
        }
        for q, v in vals.items():
            out.rows.append((j, q, v))
            worst[q] = max(worst[q], v)
    for q, v in worst.items():
        out.checks[f"max {q}"] = Check(v, 0.0, 1e-12)
    return out


def run_identities(ctx: Context) -> Outcome:
    out = Outcome()
    grid = ctx.grid
    band = (0.0, grid.dealias_cutoff * grid.fundamental / 2)
    worst = {"identity_1": 0.0, "identity_2": 0.0}
    for j in range(ctx.cfg.samples):
        V = _random(ctx, ctx.cfg.seed + 2 * j, band=band)
        W = _random(ctx, ctx.cfg.seed + 2 * j + 1, band=band)
        scale = sobolev_norm(V, 2) * sobolev_norm(W, 2)
        for q, fn in (("identity_1", identity_residual_1), ("identity_2", identity_residual_2)):
            v = fn(V, W) / scale
            out.rows.append((j, q, v))
            worst[q] = max(worst[q], v)
    for q, v in worst.items():
        out.checks[f"max {q}"] = Check(v, 0.0, 1e-10)
    return out


def run_symbol_check(ctx: Context) -> Outcome:
    out = Outcome()
    c = ctx.conjugation()
    out.M = c.M
    grid = ctx.grid
    rng = np.random.default_rng(ctx.cfg.seed)
    magnitude = max(2 * c.M, 4.0 * math.ceil(c.M))
    worst, worst_h = 0.0, 0.0
    for j in range(10):
        x = rng.integers(0, grid.points_per_axis, size=grid.dimension) * grid.spacing
        for d in range(8):
            direction = rng.standard_normal(grid.dimension)
            r = symbol_check_K_PS(c, x, direction, magnitude)
            xi = magnitude * direction / np.linalg.norm(direction)
            a = k_ps_symbol(c, x, xi)
            b = k_ps_symbol(c, x, 2 * xi)
            h = float(np.linalg.norm(b - 0.5 * a))
            out.rows.append((8 * j + d, "symbol_residual", r))
            out.rows.append((8 * j + d, "homogeneity_residual", h))
            worst, worst_h = max(worst, r), max(worst_h, h)
    out.checks["max symbol_residual"] = Check(worst, 0.0, 1e-10)
    out.checks["max homogeneity_residual"] = Check(worst_h, 0.0, 1e-10)
    return out


def run_adjoints(ctx: Context) -> Outcome:
    out = Outcome()
    f = ctx.medium()
    c = ctx.conjugation()
    out.M = c.M
    worst = {"A_PS_adjoint": 0.0, "K_PS_antiadjoint": 0.0}
    for j in range(ctx.cfg.samples):
        w = _random(ctx, ctx.cfg.seed + 2 * j)
        v = _random(ctx, ctx.cfg.seed + 2 * j + 1)
        scale = w.norm() * v.norm()
        vals = {
            "A_PS_adjoint": adjoint_residual(operator_handle("A_PS", f), w, v) / scale,
            "K_PS_antiadjoint": adjoint_residual(operator_handle("K_PS", f, c), w, v) / scale,
        }
        for q, val in vals.items():
            out.rows.append((j, q, val))
            worst[q] = max(worst[q], val)
    for q, v in worst.items():
        out.checks[f"max {q}"] = Check(v, 0.0, 1e-10)
    return out


def run_calibrate_k(ctx: Context) -> Outcome:
    out = Outcome()
    c = ctx.conjugation()
    out.M = c.M
    with ctx.stage("norm_estimates"):
        norms = estimate_K_norms(c, (-1.0, 0.0, 1.0))
    for s, v in norms.items():
        out.rows.append((0, f"K_norm_H{s:g}", v))
        out.checks[f"K_norm_H{s:g}"] = Check(v, 0.0, 0.5)
    v = _random(ctx, ctx.cfg.seed)
    history: list = []
    w = invert_I_plus_K(c, v, history=history)
    res = (w + apply_K(c, w) - v).norm() / v.norm()
    for j, h in enumerate(history):
        out.rows.append((j + 1, "neumann_term", h))
    out.rows.append((0, "neumann_residual", res))
    out.checks["neumann_residual"] = Check(res, 0.0, 2e-10)
    out.metrics["neumann_terms"] = len(history)
    return out


def run_remainder_sweep(ctx: Context) -> Outcome:
    out = Outcome()
    f = ctx.medium()
    c = ctx.conjugation()
    out.M = c.M
    geo = ctx.geometry()
    with ctx.stage("remainder"):
        rows = remainder_sweep(f, c, ctx.cfg.carriers, geo, ctx.cfg.workers)
    with ctx.stage("blocks"):
        blocks = block_order_sweep(f, ctx.cfg.carriers, geo, ctx.cfg.workers)
    out.add_sweep(rows)
    out.add_sweep(blocks)
    out.fit(rows, "remainder_L2_ratio", -math.inf, 0.2)
    out.fit(rows, "ablation_L2_ratio", 0.7, math.inf)
    out.fit(blocks, "A_PS_L2", 0.8, 1.2)
    out.fit(blocks, "A_PP_L2", 1.9, 2.1)
    return out


def _plane(grid, k, amp) -> VectorField:
    x = grid.coordinates()
    phase = np.exp(1j * np.tensordot(np.asarray(k, float), x, axes=1))
    return VectorField.from_physical(grid, np.asarray(amp, complex).reshape(-1, *[1] * grid.dimension) * phase)


def run_dispersion(ctx: Context) -> Outcome:
    out = Outcome()
    f = ctx.medium()
    if not f.is_constant:
        raise ConfigError("medium.family: the dispersion experiment needs a constant medium")
    grid = ctx.grid
    mu, lam = float(f.mu.flat[0]), float(f.lam.flat[0])
    dt = ctx.cfg.dt
    speeds = {"P": math.sqrt(2 * mu + lam), "S": math.sqrt(mu)}
    d = grid.dimension
    for k in ctx.cfg.carriers:
        kvec = np.zeros(d)
        kvec[0] = k
        xi = kvec * grid.fundamental
        for mode, speed in speeds.items():
            amp = np.zeros(d)
            amp[0 if mode == "P" else 1] = 1.0
            w0 = _plane(grid, kvec, amp)
            omega = speed * np.linalg.norm(xi)
            # sample near a quarter period, where arccos is well conditioned
            steps = max(1, int(round(math.pi / (2 * omega) / dt)))
            traj = reference_solve(f, CauchyData.displacement(w0), steps * dt, dt, sample_stride=steps)
            c = (traj.final()[0].inner(w0) / w0.inner(w0)).real
            measured = math.acos(max(-1.0, min(1.0, c))) / (steps * dt) / np.linalg.norm(xi)
            out.rows.append((k, f"{mode}_phase_speed", measured))
            out.checks[f"{mode} speed k={k}"] = Check(measured / speed - 1.0, -1e-4, 1e-4)
        out.metrics["P_phase_speed"] = out.rows[-2][2]
        out.metrics["S_phase_speed"] = out.rows[-1][2]
    w = _random(ctx, ctx.cfg.seed)
    for b in (ModeBlock.PS, ModeBlock.SP):
        r = apply_block(b, f, w).norm() / w.norm()
        out.rows.append((0, f"{b.name}_block_norm", r))
        out.checks[f"{b.name} block vanishes"] = Check(r, 0.0, 1e-10)
    return out


def run_volterra(ctx: Context) -> Outcome:
    out = Outcome()
    f = ctx.medium()
    c = ctx.conjugation()
    out.M = c.M
    out.t = ctx.cfg.t0
    geo = ctx.geometry()
    k = ctx.cfg.carriers[0]
    w0 = geo.packet(ctx.grid, k, "P") + geo.packet(ctx.grid, k, "S")
    data = CauchyData.displacement(w0)
    with ctx.stage("volterra"):
        res = volterra_solve(f, c, data, ctx.cfg.t0, ctx.cfg.dt, ctx.cfg.max_iter, ctx.cfg.tol)
    with ctx.stage("reference"):
        ref = reference_solve(f, data, ctx.cfg.t0, ctx.cfg.dt)
    err = max((a - b).norm() / max(b.norm(), 1e-300) for a, b in zip(res.w.displacements, ref.displacements))
    for j, inc in enumerate(res.increments):
        out.rows.append((j + 1, "iterate_increment", inc))
    out.rows.append((0, "reference_error", err))
    out.metrics["converged_iterations"] = res.iterations
    out.checks["reference_error"] = Check(err, 0.0, 1e-4)
    if f.is_constant:
        out.checks["converged_iterations"] = Check(res.iterations, 1, 1)
    else:
        ratios = [r for r, inc in zip(res.ratios, res.increments[1:]) if inc > 10 * ctx.cfg.tol]
        out.metrics["ratios"] = ratios
        out.checks["max contraction ratio"] = Check(max(ratios, default=0.0), 0.0, 0.5)
    return out


def run_decoupling_sweep(ctx: Context) -> Outcome:
    out = Outcome()
    f = ctx.medium()
    c = ctx.conjugation()
    out.M = c.M
    out.t = ctx.cfg.t0
    geo = ctx.geometry()
    lo = 2 * c.M / ctx.grid.fundamental
    for mode, other in (("P", "S"), ("S", "P")):
        with ctx.stage(f"sweep_{mode}"):
            rows = coupling_sweep(f, c, mode, ctx.cfg.carriers, ctx.cfg.t0, ctx.cfg.dt, geo, True, ctx.cfg.workers)
        tag = f"{mode}_input_"
        named = [SweepRow(r.carrier, {tag + q: v for q, v in r.norms.items()}) for r in rows]
        out.add_sweep(named, skip=())
        out.metrics[f"{mode}_max_energy_drift"] = max(r.norms["energy_drift"] for r in rows)
        out.fit(named, f"{tag}L2_{other}_content", -1.3, -0.7, min_carrier=lo)
        out.fit(named, f"{tag}H1_{other}_content", -0.3, 0.3, min_carrier=lo)
        out.fit(named, f"{tag}L2_{other}_velocity", -0.3, 0.3, min_carrier=lo)
        out.fit(named, f"{tag}H1_diag_defect", -0.3, 0.3, min_carrier=lo)
        out.fit(named, f"{tag}L2_diag_defect_velocity", -0.3, 0.3, min_carrier=lo)
    return out


def run_propagator_blocks(ctx: Context) -> Outcome:
    out = Outcome()
    f = ctx.medium()
    out.M = ctx.conjugation().M
    out.t = ctx.cfg.t0
    geo = ctx.geometry()
    grid = ctx.grid
    t0, dt = ctx.cfg.t0, ctx.cfg.dt
    big = 10**9

    def one(k: int) -> SweepRow:
        ws, wp = geo.packet(grid, k, "S"), geo.packet(grid, k, "P")
        c_ps = propagator_component(ModeBlock.PS, "cosine", f, ws, t0, dt, big).final()[0]
        c_pp = propagator_component(ModeBlock.PP, "cosine", f, wp, t0, dt, big).final()[0]
        c_p = mode_solve("P", f, CauchyData.displacement(wp), None, t0, dt, big).final()[0]
        return SweepRow(k, {
            "c_PS_H1": sobolev_norm(c_ps, 1),
            "c_PP_H1": sobolev_norm(c_pp, 1),
            "c_PP_minus_c_P_H1": sobolev_norm(c_pp - c_p, 1),
        })

    with ctx.stage("components"):
        if ctx.cfg.workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(ctx.cfg.workers) as pool:
                rows = list(pool.map(one, ctx.cfg.carriers))
        else:
            rows = [one(k) for k in ctx.cfg.carriers]
    out.add_sweep(rows)
    out.fit(rows, "c_PS_H1", -0.3, 0.3)
    out.fit(rows, "c_PP_H1", 0.8, 1.2)
    out.fit(rows, "c_PP_minus_c_P_H1", -0.3, 0.3)
    return out


REGISTRY: dict[str, tuple[Callable[[Context], Outcome], str]] = {
    "projector_algebra": (run_projector_algebra, "P/S projector idempotence, resolution, div/curl annihilation"),
    "identities": (run_identities, "the two product-rule vector identities on random band-limited pairs"),
    "symbol_check": (run_symbol_check, "frozen-coefficient symbol of K_PS and its degree -1 homogeneity"),
    "adjoints": (run_adjoints, "A_SP = A_PS* and K_SP = -K_PS* on random pairs"),
    "calibrate_k": (run_calibrate_k, "calibrated cutoff, H^s norms of K, Neumann inversion of I + K"),
    "remainder_sweep": (run_remainder_sweep, "conjugation remainder vs K-free ablation, block orders"),
    "dispersion": (run_dispersion, "constant-medium P/S phase speeds and vanishing off-diagonal blocks"),
    "volterra": (run_volterra, "Volterra iteration for the conjugated system vs the reference solver"),
    "decoupling_sweep": (run_decoupling_sweep, "cross-mode content of evolved pure-mode packets vs frequency"),
    "propagator_blocks": (run_propagator_blocks, "H1 norms of c_PS, c_PP and c_PP - c_P on packet sweeps"),
}


# ---------------------------------------------------------------- outputs

CSV_COLUMNS = ["experiment", "carrier", "quantity", "value", "grid", "medium", "M", "t", "seed"]


def _atomic_write(path: Path, data: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_csv(cfg: ExperimentConfig, outcome: Outcome) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for label, q, v in outcome.rows:
        writer.writerow([cfg.experiment, label, q, _fmt(float(v)), cfg.grid.size, cfg.medium.family,
                         _fmt(outcome.M), _fmt(outcome.t), cfg.seed])
    return buf.getvalue()


def _fit_dict(fit: SlopeFit) -> dict:
    return {"slope": fit.slope, "intercept": fit.intercept, "max_residual": fit.max_residual,
            "points_used": fit.points_used, "below_floor": list(fit.below_floor)}


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def plot_svg(title: str, slopes: dict, width: int = 640, height: int = 440) -> str:
    """Log-log scatter of each fitted quantity with its least-squares line."""
    pad_l, pad_r, pad_t, pad_b = 70, 230, 40, 50
    pts = [(k, v) for _, (_, data) in slopes.items() for k, v in data if v > FLOOR]
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'font-family="sans-serif" font-size="12">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="14">{title}</text>\n')
    if not pts:
        return head + f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle">no sweep quantities</text>\n</svg>\n'
    lx = np.log10([p[0] for p in pts])
    ly = np.log10([p[1] for p in pts])
    x0, x1 = lx.min() - 0.1, lx.max() + 0.1
    y0, y1 = math.floor(ly.min() - 0.1), math.ceil(ly.max() + 0.1)

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * (width - pad_l - pad_r)

    def sy(y):
        return height - pad_b - (y - y0) / (y1 - y0) * (height - pad_t - pad_b)

    parts = [head]
    parts.append(f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" y2="{height - pad_b}" stroke="black"/>\n')
    parts.append(f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>\n')
    for k in sorted({p[0] for p in pts}):
        x = sx(math.log10(k))
        parts.append(f'<text x="{x:.1f}" y="{height - pad_b + 16}" text-anchor="middle">{k}</text>\n')
    for e in range(y0, y1 + 1):
        y = sy(e)
        parts.append(f'<text x="{pad_l - 6}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>\n')
        parts.append(f'<line x1="{pad_l}" y1="{y:.1f}" x2="{width - pad_r}" y2="{y:.1f}" stroke="#ddd"/>\n')
    parts.append(f'<text x="{(pad_l + width - pad_r) / 2}" y="{height - 12}" text-anchor="middle">carrier |k|</text>\n')
    for i, (name, (fit, data)) in enumerate(sorted(slopes.items())):
        color = PALETTE[i % len(PALETTE)]
        for k, v in data:
            if v > FLOOR:
                parts.append(f'<circle cx="{sx(math.log10(k)):.1f}" cy="{sy(math.log10(v)):.1f}" r="3.5" fill="{color}"/>\n')
        ks = [k for k, v in data if v > FLOOR]
        a, b = math.log10(min(ks)), math.log10(max(ks))

        def line_y(x):
            # fit is in natural logs: ln v = slope ln k + intercept
            return (fit.slope * x * math.log(10) + fit.intercept) / math.log(10)

        parts.append(f'<line x1="{sx(a):.1f}" y1="{sy(line_y(a)):.1f}" x2="{sx(b):.1f}" y2="{sy(line_y(b)):.1f}" '
                     f'stroke="{color}" stroke-width="1.5"/>\n')
        ly_ = pad_t + 16 * i
        parts.append(f'<circle cx="{width - pad_r + 14}" cy="{ly_}" r="3.5" fill="{color}"/>\n')
        parts.append(f'<text x="{width - pad_r + 22}" y="{ly_ + 4}">{name} ({fit.slope:+.2f})</text>\n')
    parts.append("</svg>\n")
    return "".join(parts)


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    output_dir: Path


def output_dir_for(cfg: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Run one registered experiment and write rows.csv, summary.json and plot.svg."""
    out_dir = output_dir_for(cfg)
    runtimes: dict = {}
    ctx = Context(cfg, runtimes)
    ctx.current = "setup"
    summary = {
        "experiment": cfg.experiment,
        "version": __version__,
        "config": dataclasses.asdict(cfg),
        "complete": False,
    }
    fn, _ = REGISTRY[cfg.experiment]
    t_start = time.perf_counter()
    try:
        outcome = fn(ctx)
    except (ConfigError, CFLError, PositivityError) as exc:
        code = EXIT_CONFIG
        err = exc
    except (NumericalError, ConvergenceError, CalibrationError, FloatingPointError, InsufficientPointsError) as exc:
        code = EXIT_NUMERICAL
        err = exc
    else:
        err = None
    runtimes["total"] = round(time.perf_counter() - t_start, 3)
    summary["runtimes"] = runtimes
    if err is not None:
        summary["error"] = {"stage": ctx.current, "type": type(err).__name__, "message": str(err)}
        _atomic_write(out_dir / "summary.json", json.dumps(_json_safe(summary), indent=2) + "\n")
        return RunResult(code, summary, out_dir)

    checks = {name: {"value": float(c.value), "low": c.low, "high": c.high, "passed": c.passed}
              for name, c in outcome.checks.items()}
    passed = all(c["passed"] for c in checks.values())
    summary.update({
        "complete": True,
        "M": outcome.M,
        "slopes": {q: _fit_dict(fit) for q, (fit, _) in outcome.slopes.items()},
        "checks": checks,
        "metrics": outcome.metrics,
        "passed": passed,
    })
    _atomic_write(out_dir / "rows.csv", rows_csv(cfg, outcome))
    _atomic_write(out_dir / "summary.json", json.dumps(_json_safe(summary), indent=2) + "\n")
    _atomic_write(out_dir / "plot.svg", plot_svg(cfg.experiment, outcome.slopes))
    return RunResult(EXIT_PASS if passed else EXIT_THRESHOLD, summary, out_dir)


# ---------------------------------------------------------------- entry point


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="psdecouple", description="P/S decoupling experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run the experiment described by a YAML/JSON config")
    run_p.add_argument("config", type=Path)
    sub.add_parser("schema", help="print the config schema with defaults")
    sub.add_parser("list", help="list registered experiments")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS

    if args.command == "schema":
        print(json.dumps(_json_safe(config_schema()), indent=2))
        return EXIT_PASS
    if args.command == "list":
        for name, (_, doc) in REGISTRY.items():
            print(f"{name:20s} {doc}")
        return EXIT_PASS
    try:
        cfg = parse_config(args.config.read_text())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = run_experiment(cfg)
    s = result.summary
    if "error" in s:
        e = s["error"]
        print(f"{cfg.experiment}: failed in stage {e['stage']}: {e['type']}: {e['message']}", file=sys.stderr)
    else:
        for name, c in s["checks"].items():
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}: {c['value']:.6g} in [{c['low']:g}, {c['high']:g}]")
        print(f"outputs in {result.output_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
