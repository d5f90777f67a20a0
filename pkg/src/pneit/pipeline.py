"""Glue between configuration, forward model and sampler; field summaries on a grid."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.stats import chi2

from .config import RunConfig
from .forward import ForwardModel
from .geometry import CollocationDesign, Electrodes, build_electrodes, concentric_design, design_with_total
from .kernel import KLBasis, SEKernel, nystrom_eigs
from .likelihood import FrameLikelihood, Protocol, reference_protocol
from .prior import TemporalModel
from .smc import (ParticleEnsemble, PcnConfig, StepRecord, TemperingLadder, run_filter, temper)


@dataclass
class Problem:
    """Everything that stays fixed across particles for a given configuration."""

    config: RunConfig
    electrodes: Electrodes
    basis: KLBasis
    kernel_u: SEKernel
    design: CollocationDesign
    protocol: Protocol

    @cached_property
    def forward(self) -> ForwardModel:
        fm = ForwardModel(self.design, self.electrodes, self.kernel_u, workers=self.config.threads)
        fm.bind_basis(self.basis)
        return fm

    @cached_property
    def dense_design(self) -> CollocationDesign:
        return design_with_total(self.config.dense_points, self.electrodes, level="dense")

    def with_design(self, design: CollocationDesign) -> "Problem":
        return Problem(self.config, self.electrodes, self.basis, self.kernel_u, design, self.protocol)

    def likelihood(self, y: np.ndarray, pn: bool | None = None) -> FrameLikelihood:
        return FrameLikelihood(self.forward, self.protocol, y, self.config.pn if pn is None else pn)

    def temporal_model(self, lam: float | None = None) -> TemporalModel:
        c = self.config
        return TemporalModel(c.lam if lam is None else lam, c.tau,
                             tuple(k / c.frames for k in range(1, c.frames + 1)))

    def ladder(self) -> TemperingLadder:
        return TemperingLadder(self.config.tempering_steps)

    def pcn(self) -> PcnConfig:
        return PcnConfig(beta=self.config.pcn_beta, moves=self.config.moves)


_BASIS_CACHE: dict = {}


def build_problem(config: RunConfig, design: CollocationDesign | None = None) -> Problem:
    electrodes = build_electrodes(config.n_electrodes)
    key = (config.amp_a, config.length_a, config.n_modes)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = nystrom_eigs(SEKernel(config.amp_a, config.length_a), n_modes=config.n_modes)
    if design is None:
        design = concentric_design(config.design_level, electrodes)
    protocol = reference_protocol(config.n_electrodes, config.sigma, config.current)
    return Problem(config, electrodes, _BASIS_CACHE[key], SEKernel(config.amp_u, config.length_u),
                   design, protocol)


@dataclass
class StaticResult:
    ensemble: ParticleEnsemble
    records: list[StepRecord]
    n_evals: int
    seconds: float
    design_total: int
    pn: bool


def static_run(problem: Problem, y: np.ndarray, rng: np.random.Generator, pn: bool | None = None,
               particles: int | None = None, frame: int = 1) -> StaticResult:
    """Tempered SMC from the static N(0, I) coefficient prior on one frame."""
    c = problem.config
    N = c.particles if particles is None else particles
    lik = problem.likelihood(y, pn)
    coeffs = rng.standard_normal((N, c.n_modes))
    t0 = time.perf_counter()
    res = temper(coeffs, lik, problem.ladder(), problem.pcn(), rng, prior_std=1.0, frame=frame)
    ens = ParticleEnsemble(res.coeffs, res.logw, index=1, log_evidence=res.log_evidence)
    return StaticResult(ens, res.records, lik.n_evals, time.perf_counter() - t0,
                        problem.design.total, lik.pn)


def filter_run(problem: Problem, ys: np.ndarray, times: np.ndarray, rng: np.random.Generator,
               lam: float | None = None, callback=None) -> list[ParticleEnsemble]:
    c = problem.config
    model = problem.temporal_model(lam)
    model = TemporalModel(model.lam, model.tau, tuple(float(t) for t in times))
    return run_filter(range(len(ys)), np.asarray(times), lambda k: problem.likelihood(ys[k]), model,
                      c.n_modes, c.particles, problem.ladder(), problem.pcn(), rng, callback)


# -- grid summaries -------------------------------------------------------------------


@dataclass(frozen=True)
class FieldGrid:
    """Regular ``n x n`` grid over [-1, 1]^2 with a mask for the unit disc."""

    n: int = 64

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n)

    @cached_property
    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(self.axis, self.axis)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def inside(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1) < 1.0


@dataclass
class FieldSummary:
    grid: FieldGrid
    mean: np.ndarray          # (n*n,), NaN outside the disc
    std: np.ndarray
    extra: dict = field(default_factory=dict)

    def integrated_std(self) -> float:
        """Integral of the pointwise std of ``a`` over the disc (grid quadrature)."""
        return math.pi * float(np.nanmean(self.std))


def conductivity_summary(basis: KLBasis, coeffs: np.ndarray, weights: np.ndarray | None = None,
                         grid: FieldGrid | None = None) -> FieldSummary:
    """Weighted pointwise mean and std of ``a = exp(theta)`` on the grid."""
    grid = FieldGrid() if grid is None else grid
    w = np.full(len(coeffs), 1.0 / len(coeffs)) if weights is None else np.asarray(weights) / np.sum(weights)
    pts = grid.points[grid.inside]
    Fx = basis.eigenfunctions(pts) * np.sqrt(basis.eigenvalues)
    a = np.exp(np.asarray(coeffs) @ Fx.T)              # (N, n_inside)
    mean = w @ a
    var = np.clip(w @ (a - mean) ** 2, 0.0, None)
    full_mean = np.full(len(grid.points), np.nan)
    full_std = np.full(len(grid.points), np.nan)
    full_mean[grid.inside] = mean
    full_std[grid.inside] = np.sqrt(var)
    return FieldSummary(grid, full_mean, full_std)


def weighted_moments(coeffs: np.ndarray, weights: np.ndarray | None = None):
    w = np.full(len(coeffs), 1.0 / len(coeffs)) if weights is None else np.asarray(weights) / np.sum(weights)
    mu = w @ coeffs
    d = coeffs - mu
    return mu, (d * w[:, None]).T @ d


def principal_axes(coeffs: np.ndarray, weights: np.ndarray | None = None, k: int = 2):
    """Mean and leading ``k`` eigenvectors (columns) of a weighted particle cloud."""
    mu, S = weighted_moments(coeffs, weights)
    vals, vecs = np.linalg.eigh(S)
    order = np.argsort(vals)[::-1][:k]
    return mu, vecs[:, order], vals[order]


def project(coeffs: np.ndarray, center: np.ndarray, axes: np.ndarray) -> np.ndarray:
    return (np.atleast_2d(coeffs) - center) @ axes


def inside_ellipse(point: np.ndarray, cloud: np.ndarray, weights: np.ndarray | None = None,
                   level: float = 0.95) -> tuple[bool, float]:
    """Whether ``point`` lies in the Gaussian ``level`` credible ellipse of a 2-D cloud."""
    mu, S = weighted_moments(cloud, weights)
    d = np.asarray(point, float).ravel() - mu
    m2 = float(d @ np.linalg.solve(S, d))
    return m2 <= chi2.ppf(level, df=len(mu)), m2


def blob_angle(points: np.ndarray, values: np.ndarray) -> float:
    """Polar angle of the centroid of the above-median part of a field sampled at ``points``."""
    ok = np.isfinite(values)
    v = values[ok]
    w = np.clip(v - np.median(v), 0.0, None)
    c = w @ points[ok]
    return math.atan2(c[1], c[0])
