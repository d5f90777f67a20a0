"""Reference-protocol measurements and the discretisation-aware likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Protocol:
    """Stimulation patterns (J, m), differencing map (m-1, m) and noise std."""

    patterns: np.ndarray
    diff: np.ndarray
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("noise std must be non-negative")
        J, m = self.patterns.shape
        if J > m - 1:
            raise ValueError(f"at most m-1={m - 1} independent patterns, got {J}")
        if np.any(np.abs(self.patterns.sum(1)) > 1e-12):
            raise ValueError("every stimulation pattern must conserve current")

    @property
    def J(self) -> int:
        return self.patterns.shape[0]

    @property
    def m(self) -> int:
        return self.patterns.shape[1]

    def with_sigma(self, sigma: float) -> "Protocol":
        return Protocol(self.patterns, self.diff, sigma)


# Drive current in amperes.  With sigma = 1 it puts the electrode voltages at
# O(10), the scale of the solver prior (sqrt of its amplitude 100).
DEFAULT_CURRENT = 100.0


def reference_protocol(m: int = 8, sigma: float = 1.0, current: float = DEFAULT_CURRENT) -> Protocol:
    """Drive ``current`` from electrode 1 to each other electrode in turn."""
    if m < 2:
        raise ValueError("need at least two electrodes")
    patterns = np.zeros((m - 1, m))
    patterns[:, 0] = -current
    patterns[np.arange(m - 1), np.arange(1, m)] = current
    diff = np.zeros((m - 1, m))
    diff[:, 0] = -1.0
    diff[np.arange(m - 1), np.arange(1, m)] = 1.0
    return Protocol(patterns, diff, float(sigma))


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    y: np.ndarray


def _gauss_logpdf_rows(resid: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Sum over the last-but-one axis of log N(resid_j | 0, cov); batched."""
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, np.swapaxes(resid, -1, -2))
    d = cov.shape[-1]
    logdet = 2 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
    n_rows = resid.shape[-2]
    return -0.5 * (z * z).sum((-1, -2)) - 0.5 * n_rows * (logdet + d * math.log(2 * math.pi))


def marginal_loglik(y: np.ndarray, means: np.ndarray, cov: np.ndarray, protocol: Protocol,
                    pn: bool = True) -> np.ndarray:
    """Sum over patterns of log N(y_j | D mu_j, sigma^2 I + D Sigma D^T).

    ``y`` is (J, m-1); ``means`` (..., J, m) and ``cov`` (..., m, m) may carry
    a leading particle axis.  With ``pn=False`` the PMM covariance is ignored.
    """
    D = protocol.diff
    resid = np.asarray(y) - means @ D.T
    k = D.shape[0]
    if pn:
        eff = D @ cov @ D.T + protocol.sigma ** 2 * np.eye(k)
        return _gauss_logpdf_rows(resid, eff)
    s2 = protocol.sigma ** 2
    n = resid.shape[-2] * k
    return -0.5 * (resid * resid).sum((-1, -2)) / s2 - 0.5 * n * math.log(2 * math.pi * s2)


class FrameLikelihood:
    """Maps batches of KL coefficients to the marginal log-likelihood of one frame."""

    def __init__(self, forward, protocol: Protocol, y: np.ndarray, pn: bool = True):
        self.forward = forward
        self.protocol = protocol
        self.y = np.asarray(y, float)
        self.pn = pn
        self.n_evals = 0

    def __call__(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.atleast_2d(coeffs)
        self.n_evals += len(coeffs)
        means, covs = self.forward.posterior_batch(coeffs, self.protocol.patterns)
        return marginal_loglik(self.y, means, covs, self.protocol, self.pn)
