"""Log-conductivity field on a KL basis with Brownian coefficient dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import KLBasis


@dataclass(frozen=True, eq=False)
class ThetaState:
    """Coefficients of ``theta = log a`` in the scaled basis ``sqrt(lam_i) e_i``."""

    coeffs: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite field coefficients")
        object.__setattr__(self, "coeffs", c)

    def to_row(self) -> list[str]:
        return [repr(float(self.t))] + [repr(float(c)) for c in self.coeffs]

    @classmethod
    def from_row(cls, row) -> "ThetaState":
        vals = [float(v) for v in row]
        return cls(np.array(vals[1:]), vals[0])


@dataclass(frozen=True, eq=False)
class KLField:
    """A ThetaState bound to its basis; evaluates ``theta`` and ``grad theta``."""

    basis: KLBasis
    state: ThetaState

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        F, dF = self.basis.scaled_features(np.atleast_2d(x))
        return F @ self.state.coeffs, np.einsum("nid,i->nd", dF, self.state.coeffs)


def theta_eval(basis: KLBasis, state: ThetaState, x) -> tuple[float, np.ndarray]:
    th, g = KLField(basis, state).evaluate(np.asarray(x, float).reshape(1, 2))
    return float(th[0]), g[0]


@dataclass(frozen=True)
class TemporalModel:
    """Brownian coefficients with covariance ``lam * min(t + tau, t' + tau)``."""

    lam: float
    tau: float = 0.0
    times: tuple[float, ...] = field(default_factory=lambda: tuple(k / 49 for k in range(1, 50)))

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("Brownian rate must be non-negative")
        if self.tau < 0:
            raise ValueError("time offset tau must be non-negative")
        t = np.asarray(self.times)
        if len(t) and (np.any(np.diff(t) <= 0) or t[0] + self.tau <= 0):
            raise ValueError("time grid must be strictly increasing with t_1 + tau > 0")

    def increment_var(self, s: float) -> float:
        if not s > 0:
            raise ValueError(f"increment duration must be positive, got {s}")
        return self.lam * (s + self.tau)

    @property
    def initial_var(self) -> float:
        return self.lam * (self.times[0] + self.tau)


def sample_initial(model: TemporalModel, basis: KLBasis, rng: np.random.Generator,
                   size: int | None = None):
    """Draw from the time-``t_1`` marginal; ``size`` gives an (size, n_modes) array instead."""
    sd = math.sqrt(model.initial_var)
    if size is None:
        return ThetaState(sd * rng.standard_normal(basis.n_modes), model.times[0])
    return sd * rng.standard_normal((size, basis.n_modes))


def sample_increment(model: TemporalModel, s: float, rng: np.random.Generator,
                     n_modes: int, size: int | None = None) -> np.ndarray:
    sd = math.sqrt(model.increment_var(s))
    shape = n_modes if size is None else (size, n_modes)
    return sd * rng.standard_normal(shape)


def increment_logdensity(model: TemporalModel, dcoeffs: np.ndarray, s: float) -> np.ndarray:
    """Log N(dcoeffs | 0, lam (s + tau) I); vectorised over leading axes."""
    v = model.increment_var(s)
    d = np.asarray(dcoeffs, float)
    n = d.shape[-1]
    return -0.5 * (d * d).sum(-1) / v - 0.5 * n * math.log(2 * math.pi * v)


def static_prior_sample(basis: KLBasis, rng: np.random.Generator, size: int | None = None):
    """Coefficients i.i.d. N(0, 1): the truncated GP(0, k_a) prior of a single frame."""
    shape = basis.n_modes if size is None else (size, basis.n_modes)
    return rng.standard_normal(shape)
