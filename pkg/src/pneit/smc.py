"""Tempered sequential Monte Carlo over KL coefficients with pCN rejuvenation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .prior import TemporalModel

logger = logging.getLogger(__name__)

LogLik = Callable[[np.ndarray], np.ndarray]


class DegenerateWeights(RuntimeError):
    """Every particle has zero likelihood."""


@dataclass
class PcnConfig:
    beta: float = 0.5
    target_low: float = 0.10
    target_high: float = 0.25
    moves: int = 5
    adapt_factor: float = 1.2
    beta_max: float = 0.99
    beta_min: float = 1e-4

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("pCN step size must lie in (0, 1)")

    def adapt(self, acceptance: float) -> None:
        """Multiplicative step-size update toward the target acceptance band."""
        if acceptance < self.target_low:
            self.beta = max(self.beta / self.adapt_factor, self.beta_min)
        elif acceptance > self.target_high:
            self.beta = min(self.beta * self.adapt_factor, self.beta_max)


@dataclass(frozen=True)
class TemperingLadder:
    n_steps: int = 100

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("tempering ladder needs at least one step")

    @property
    def temperatures(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_steps + 1)


@dataclass
class ParticleEnsemble:
    """Weighted particles; ``coeffs`` is (N, n_modes) and ``logw`` normalised."""

    coeffs: np.ndarray
    logw: np.ndarray
    index: int = 0
    t: float = 0.0
    log_evidence: float = 0.0

    def __post_init__(self):
        if len(self.coeffs) < 2:
            raise ValueError("an ensemble needs at least two particles")
        self.logw = normalise_logw(np.asarray(self.logw, float))

    @classmethod
    def uniform(cls, coeffs: np.ndarray, index: int = 0, t: float = 0.0) -> "ParticleEnsemble":
        return cls(np.asarray(coeffs, float), np.zeros(len(coeffs)), index, t)

    @property
    def N(self) -> int:
        return len(self.coeffs)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.logw)

    def mean(self) -> np.ndarray:
        return self.weights @ self.coeffs

    def var(self) -> np.ndarray:
        w = self.weights
        mu = w @ self.coeffs
        return w @ (self.coeffs - mu) ** 2

    def cov(self) -> np.ndarray:
        w = self.weights
        d = self.coeffs - w @ self.coeffs
        return (d * w[:, None]).T @ d

    def ess(self) -> float:
        return ess(self.weights)


def normalise_logw(logw: np.ndarray) -> np.ndarray:
    top = logsumexp(logw)
    if not np.isfinite(top):
        raise DegenerateWeights("all particle weights are zero")
    return logw - top


def ess(weights: np.ndarray) -> float:
    w = np.asarray(weights, float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights are all zero")
    w = w / total
    return float(1.0 / (w @ w))


def systematic_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    N = len(weights)
    positions = (rng.uniform() + np.arange(N)) / N
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="left")


def systematic_resample(ensemble: ParticleEnsemble, rng: np.random.Generator) -> ParticleEnsemble:
    idx = systematic_indices(ensemble.weights, rng)
    return replace(ensemble, coeffs=ensemble.coeffs[idx], logw=np.zeros(ensemble.N))


def pcn_propose(theta: np.ndarray, center: np.ndarray, prior_std: float, beta: float,
                rng: np.random.Generator) -> np.ndarray:
    xi = prior_std * rng.standard_normal(np.shape(theta))
    return center + math.sqrt(1.0 - beta * beta) * (theta - center) + beta * xi


def pcn_sweep(theta: np.ndarray, log_ratio: np.ndarray, target: LogLik, prior_std: float,
              beta: float, rng: np.random.Generator, center: np.ndarray | float = 0.0):
    """One pCN step for a batch of chains.

    ``target`` returns the log Radon-Nikodym derivative of the target with
    respect to the Gaussian reference ``N(center, prior_std^2 I)``; ``log_ratio``
    holds its current value.  Returns the new states, ratios and accept flags.
    """
    center = np.broadcast_to(center, theta.shape)
    prop = pcn_propose(theta, center, prior_std, beta, rng)
    new_ratio = target(prop)
    log_u = np.log(rng.uniform(size=len(theta)))
    accept = log_u < new_ratio - log_ratio
    theta = np.where(accept[:, None], prop, theta)
    return theta, np.where(accept, new_ratio, log_ratio), accept


def pcn_move(state: np.ndarray, target_logdensity: Callable[[np.ndarray], float], prior_std: float,
             config: PcnConfig, rng: np.random.Generator, center=0.0) -> tuple[np.ndarray, bool]:
    """Single-chain pCN transition; ``target_logdensity`` is the log ratio to the reference."""
    state = np.asarray(state, float)
    prop = pcn_propose(state, np.broadcast_to(center, state.shape), prior_std, config.beta, rng)
    log_alpha = target_logdensity(prop) - target_logdensity(state)
    if math.log(rng.uniform()) < log_alpha:
        return prop, True
    return state, False


@dataclass
class StepRecord:
    frame: int
    step: int
    temperature: float
    ess: float
    acceptance: float
    beta: float
    resampled: bool


@dataclass
class TemperingResult:
    coeffs: np.ndarray
    logw: np.ndarray
    loglik: np.ndarray
    log_evidence: float
    records: list[StepRecord] = field(default_factory=list)


def temper(coeffs: np.ndarray, loglik: LogLik, ladder: TemperingLadder, pcn: PcnConfig,
           rng: np.random.Generator, prior_std: float, center: np.ndarray | float = 0.0,
           logw: np.ndarray | None = None, frame: int = 0, ess_fraction: float = 0.5,
           ll: np.ndarray | None = None) -> TemperingResult:
    """Anneal ``loglik`` into a particle population drawn from the Gaussian reference.

    Each particle's reference is ``N(center_i, prior_std^2 I)``; the annealed
    target is reference times ``exp(temperature * loglik)``.
    """
    N = len(coeffs)
    center = np.broadcast_to(np.asarray(center, float), coeffs.shape).copy()
    logw = np.full(N, -math.log(N)) if logw is None else normalise_logw(np.asarray(logw, float))
    ll = loglik(coeffs) if ll is None else ll
    if not np.any(np.isfinite(ll)):
        raise DegenerateWeights(f"frame {frame}: every particle has zero likelihood")
    temps = ladder.temperatures
    log_evidence = 0.0
    records = []
    for k in range(1, len(temps)):
        inc = (temps[k] - temps[k - 1]) * ll
        with np.errstate(invalid="ignore"):
            step_logz = logsumexp(logw + inc)
        if not np.isfinite(step_logz):
            raise DegenerateWeights(f"frame {frame}, step {k}: weights collapsed")
        log_evidence += step_logz
        logw = logw + inc - step_logz
        cur_ess = ess(np.exp(logw))
        acc = math.nan
        resampled = cur_ess < ess_fraction * N
        if resampled:
            idx = systematic_indices(np.exp(logw), rng)
            coeffs, ll, center = coeffs[idx], ll[idx], center[idx]
            logw = np.full(N, -math.log(N))
            T = temps[k]

            def target(c, T=T):
                return T * loglik(c)

            n_acc = 0
            for _ in range(pcn.moves):
                coeffs, tll, accepted = pcn_sweep(coeffs, T * ll, target, prior_std, pcn.beta, rng, center)
                ll = np.where(accepted, tll / T, ll)
                n_acc += accepted.sum()
            acc = n_acc / (pcn.moves * N)
            records.append(StepRecord(frame, k, float(temps[k]), cur_ess, acc, pcn.beta, True))
            pcn.adapt(acc)
        else:
            records.append(StepRecord(frame, k, float(temps[k]), cur_ess, acc, pcn.beta, False))
    return TemperingResult(coeffs, logw, ll, log_evidence, records)


def filter_step(ensemble: ParticleEnsemble, loglik: LogLik, t_new: float, model: TemporalModel,
                ladder: TemperingLadder, pcn: PcnConfig, rng: np.random.Generator,
                frame: int | None = None) -> tuple[ParticleEnsemble, list[StepRecord]]:
    """Propagate by the prior increment, then anneal in the new frame's likelihood.

    An ensemble with ``index == 0`` is taken to hold draws from the time-``t_1``
    prior marginal and is not propagated.
    """
    frame = ensemble.index + 1 if frame is None else frame
    if ensemble.index == 0:
        center = np.zeros_like(ensemble.coeffs)
        std = math.sqrt(model.initial_var)
        coeffs = ensemble.coeffs
    else:
        s = t_new - ensemble.t
        std = math.sqrt(model.increment_var(s))
        center = ensemble.coeffs
        coeffs = center + std * rng.standard_normal(center.shape)
    res = temper(coeffs, loglik, ladder, pcn, rng, std, center, ensemble.logw, frame)
    out = ParticleEnsemble(res.coeffs, res.logw, frame, t_new,
                           ensemble.log_evidence + res.log_evidence)
    return out, res.records


def predictive(ensemble: ParticleEnsemble, s: float, model: TemporalModel,
               rng: np.random.Generator) -> ParticleEnsemble:
    std = math.sqrt(model.increment_var(s))
    coeffs = ensemble.coeffs + std * rng.standard_normal(ensemble.coeffs.shape)
    return ParticleEnsemble(coeffs, ensemble.logw.copy(), ensemble.index + 1, ensemble.t + s,
                            ensemble.log_evidence)


def run_filter(frames, times, loglik_for: Callable[[int], LogLik], model: TemporalModel, n_modes: int,
               n_particles: int, ladder: TemperingLadder, pcn: PcnConfig, rng: np.random.Generator,
               callback: Callable[[ParticleEnsemble, list[StepRecord]], None] | None = None):
    """Filter a sequence of frames; ``loglik_for(k)`` returns the log-likelihood of frame ``k``."""
    coeffs = math.sqrt(model.initial_var) * rng.standard_normal((n_particles, n_modes))
    ens = ParticleEnsemble.uniform(coeffs, index=0, t=times[0])
    history = []
    for k in frames:
        ens, recs = filter_step(ens, loglik_for(k), times[k], model, ladder, pcn, rng, frame=k + 1)
        logger.info("frame %d: ESS %.1f, beta %.3f, log-evidence %.2f", k + 1, ens.ess(), pcn.beta,
                    ens.log_evidence)
        history.append(ens)
        if callback is not None:
            callback(ens, recs)
    return history
