"""Complete-electrode-model collocation and the probabilistic meshless posterior.

Every linear functional used here (interior PDE residual, no-flux condition,
electrode current integral, grounding sum, point evaluation) is a finite sum
of *atoms* ``c0 u(x) + g . grad u(x) + c2 lap u(x)``.  The Gram matrix of the
atoms under the SE kernel has a closed form; functional Gram blocks are
obtained by summing atoms that belong to the same functional.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .geometry import CollocationDesign, Electrodes
from .kernel import KLBasis, SEKernel, radial_factors


class NumericalError(RuntimeError):
    """Gram factorisation failed even after nugget escalation."""


@dataclass(frozen=True, eq=False)
class StimulationPattern:
    currents: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.currents, float)
        if abs(c.sum()) > 1e-12 * max(1.0, np.abs(c).sum()):
            raise ValueError(f"currents must sum to zero, got {c.sum():.3e}")
        object.__setattr__(self, "currents", c)


@dataclass(frozen=True, eq=False)
class OperatorSystem:
    """``G = L Lbar k``, ``C = P Lbar k``, ``P = P Pbar k`` for one field."""

    G: np.ndarray
    C: np.ndarray
    P: np.ndarray
    n_interior: int
    n_boundary: int
    m: int

    @property
    def n_rows(self) -> int:
        return self.G.shape[0]

    @property
    def gauge_row(self) -> int:
        return self.G.shape[0] - 1

    def rhs(self, currents: np.ndarray) -> np.ndarray:
        currents = np.asarray(currents, float)
        z = np.zeros(currents.shape[:-1] + (self.n_rows,))
        z[..., self.n_interior + self.n_boundary:self.n_interior + self.n_boundary + self.m] = currents
        return z


@dataclass(frozen=True, eq=False)
class PMMResult:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class Factorised:
    """Cholesky factor of the Jacobi-scaled, nugget-regularised Gram matrix."""

    chol: tuple
    scale: np.ndarray
    nugget: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        d = self.scale.reshape((-1,) + (1,) * (b.ndim - 1))
        return d * scipy.linalg.cho_solve(self.chol, d * b, check_finite=False)


def factorise(G: np.ndarray, rel_nugget: float = 1e-8, escalations: int = 2,
              exact: tuple = ()) -> Factorised:
    """Cholesky of ``G + nugget * D`` with ``nugget = rel_nugget * mean(diag G)``.

    ``D`` is the identity except for zeros at the ``exact`` rows, which are
    kept as hard constraints (the grounding row).  The matrix stays positive
    definite because each exempt row has a positive diagonal of its own.
    The factorisation runs on the Jacobi-scaled matrix, where the nugget
    becomes ``nugget / G_ii`` on each diagonal entry.  On failure the nugget
    grows x10, at most ``escalations`` times.
    """
    diag = np.diag(G).copy()
    if np.any(diag <= 0) or not np.all(np.isfinite(G)):
        raise NumericalError("Gram matrix has non-positive or non-finite diagonal")
    scale = 1.0 / np.sqrt(diag)
    Gs = np.multiply(G, np.outer(scale, scale))
    nug = rel_nugget * float(np.mean(diag))
    n = len(Gs)
    mask = np.ones(n)
    mask[list(exact)] = 0.0
    for _ in range(escalations + 1):
        A = Gs.copy()
        A.flat[::n + 1] += nug * mask * scale * scale
        try:
            chol = scipy.linalg.cho_factor(A, lower=True, overwrite_a=True, check_finite=False)
            return Factorised(chol, scale, nug)
        except np.linalg.LinAlgError:
            nug *= 10
    cond = np.linalg.cond(Gs)
    raise NumericalError(f"Gram factorisation failed with nugget {nug / 10:.1e}; condition estimate {cond:.3e}")


def _functional_atoms(design: CollocationDesign, electrodes: Electrodes):
    """Atom points, the functional each belongs to, and fixed geometric weights."""
    m = electrodes.m
    q = electrodes.quad_points.shape[1]
    pts = np.vstack([
        design.interior,
        design.boundary,
        electrodes.quad_points.reshape(-1, 2),
        electrodes.centers,            # grounding sum
        electrodes.centers,            # point evaluations
    ])
    nA, nB = design.n_interior, design.n_boundary
    group = np.concatenate([
        np.arange(nA + nB),
        nA + nB + np.repeat(np.arange(m), q),
        np.full(m, nA + nB + m),
        nA + nB + m + 1 + np.arange(m),
    ])
    normals = np.vstack([
        np.zeros((nA, 2)),
        design.normals,
        (electrodes.quad_normals * electrodes.quad_weights[..., None]).reshape(-1, 2),
        np.zeros((2 * m, 2)),
    ])
    return pts, group, normals


class ForwardModel:
    """Collocation operators for a fixed design, electrode ring and kernel ``k_u``.

    Geometry-only quantities (pairwise distances and kernel factors between
    atoms) are computed once; each field only changes the atom coefficients.
    Atoms come in three kinds: interior (gradient and Laplacian terms), flux
    (boundary and electrode quadrature, gradient only) and value atoms at the
    electrode centres.  :meth:`assemble_values` exploits this; the generic
    :meth:`atom_gram` is kept as a reference path.
    """

    def __init__(self, design: CollocationDesign, electrodes: Electrodes, kernel: SEKernel,
                 rel_nugget: float = 1e-8, workers: int = 1):
        design.validate()
        self.workers = max(1, int(workers))
        self.design = design
        self.electrodes = electrodes
        self.kernel = kernel
        self.rel_nugget = rel_nugget
        self.points, self.group, self._normals = _functional_atoms(design, electrodes)
        self.nA, self.nB, self.m = design.n_interior, design.n_boundary, electrodes.m
        self.n_rows = self.nA + self.nB + self.m + 1
        self.n_atoms = len(self.points)
        self._starts = np.flatnonzero(np.r_[True, np.diff(self.group) != 0])
        # atoms carrying the conductivity: interior, boundary, electrode quadrature
        self.n_field = self.nA + self.nB + electrodes.quad_points.shape[0] * electrodes.quad_points.shape[1]
        self._c0 = np.zeros(self.n_atoms)
        self._c0[self.n_field:] = 1.0
        self._generic = None
        self._basis_cache = None

        s = kernel.s
        X = self.field_points
        V = electrodes.centers
        self._X, self._V = np.ascontiguousarray(X), V
        rho_xv = _sqdist(X, V)
        K_xv = kernel.amplitude * np.exp(-0.5 * s * rho_xv)
        self._sK_xv = s * K_xv
        self._LK_xv = radial_factors(s, rho_xv)[0] * K_xv
        self._K_vv = kernel(V, V)
        self._nq = electrodes.quad_points.shape[1]
        nAB = self.nA + self.nB
        self._row = np.concatenate([np.arange(nAB), nAB + np.repeat(np.arange(self.m), self._nq)])

    def _sum_quadrature(self, M: np.ndarray) -> np.ndarray:
        """Collapse the quadrature rows of each electrode into one row."""
        nAB = self.nA + self.nB
        return np.concatenate([M[:nAB], M[nAB:].reshape(self.m, self._nq, -1).sum(1)])

    @property
    def field_points(self) -> np.ndarray:
        """Points at which ``theta`` and ``grad theta`` are needed."""
        return self.points[:self.n_field]

    def coefficients(self, theta: np.ndarray, grad: np.ndarray):
        """Atom coefficients ``(c0, g, c2)`` for log-conductivity values at field points.

        ``theta`` has shape (..., F) and ``grad`` (..., F, 2).
        """
        theta = np.asarray(theta, float)
        batch = theta.shape[:-1]
        a = np.exp(theta)
        nA, F = self.nA, self.n_field
        g = np.zeros(batch + (self.n_atoms, 2))
        c2 = np.zeros(batch + (self.n_atoms,))
        g[..., :nA, :] = a[..., :nA, None] * grad[..., :nA, :]
        c2[..., :nA] = a[..., :nA]
        g[..., nA:F, :] = a[..., nA:F, None] * self._normals[nA:F]
        c0 = np.broadcast_to(self._c0, batch + (self.n_atoms,))
        return c0, g, c2

    def atom_gram(self, c0, g, c2) -> np.ndarray:
        """Closed-form Gram matrix of all atoms, batched over leading axes."""
        if self._generic is None:
            x = self.points
            rx = x[:, 0:1] - x[None, :, 0]
            ry = x[:, 1:2] - x[None, :, 1]
            rho = rx ** 2 + ry ** 2
            K = self.kernel.amplitude * np.exp(-0.5 * self.kernel.s * rho)
            self._generic = (rx, ry, K) + radial_factors(self.kernel.s, rho)
        rx, ry, K, L, A, B = self._generic
        s = self.kernel.s
        gx, gy = g[..., 0], g[..., 1]
        q = gx[..., :, None] * rx + gy[..., :, None] * ry          # g_i . r_ij
        p = rx * gx[..., None, :] + ry * gy[..., None, :]          # g_j . r_ij
        ci, cj = c0[..., :, None], c0[..., None, :]
        di, dj = c2[..., :, None], c2[..., None, :]
        gg = gx[..., :, None] * gx[..., None, :] + gy[..., :, None] * gy[..., None, :]
        out = ci * cj
        out = out + s * (ci * p - q * cj + gg) - s * s * q * p
        out = out + L * (di * cj + ci * dj)
        out = out + s * A * (q * dj - p * di)
        out = out + B * di * dj
        return out * K

    def assemble_generic(self, theta: np.ndarray, grad: np.ndarray) -> OperatorSystem:
        full = self.atom_gram(*self.coefficients(theta, grad))
        full = np.add.reduceat(np.add.reduceat(full, self._starts, axis=-1), self._starts, axis=-2)
        n = self.n_rows
        G = 0.5 * (full[:n, :n] + full[:n, :n].T)
        return OperatorSystem(G=G, C=full[n:, :n], P=full[n:, n:], n_interior=self.nA,
                              n_boundary=self.nB, m=self.m)

    def assemble_values(self, theta: np.ndarray, grad: np.ndarray) -> OperatorSystem:
        """Operator system from ``theta`` (F,) and ``grad theta`` (F, 2) at :attr:`field_points`."""
        nA = self.nA
        a = np.exp(theta)
        g = a[:, None] * self._normals[:self.n_field]
        g[:nA] = a[:nA, None] * grad[:nA]
        X = self._X
        u = (g * X).sum(1)
        n = self.n_rows
        R = _flux_gram(X, g, a, nA, self.kernel.amplitude, self.kernel.s, self._row, n - 1)
        qv = u[:, None] - g @ self._V.T
        xv = -self._sK_xv * qv
        xv[:nA] += self._LK_xv[:nA] * a[:nA, None]
        XV = self._sum_quadrature(xv)
        G = np.empty((n, n))
        G[:-1, :-1] = R
        G[:-1, -1] = G[-1, :-1] = XV.sum(1)
        G[-1, -1] = self._K_vv.sum()
        C = np.empty((self.m, n))
        C[:, :-1] = XV.T
        C[:, -1] = self._K_vv.sum(1)
        return OperatorSystem(G=G, C=C, P=self._K_vv.copy(), n_interior=nA,
                              n_boundary=self.nB, m=self.m)

    def assemble(self, field) -> OperatorSystem:
        theta, grad = field.evaluate(self.field_points)
        return self.assemble_values(theta, grad)

    def posterior(self, system: OperatorSystem, currents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means for each row of ``currents`` (J, m) and the shared covariance."""
        fac = factorise(system.G, self.rel_nugget, exact=(system.gauge_row,))
        rhs = system.rhs(np.atleast_2d(currents)).T
        sol = fac.solve(np.hstack([rhs, system.C.T]))
        J = rhs.shape[1]
        mean = (system.C @ sol[:, :J]).T
        cov = system.P - system.C @ sol[:, J:]
        return mean, clip_psd(cov)

    def solve_field(self, field, currents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.posterior(self.assemble(field), currents)

    # -- batched path used by the particle filter ---------------------------------

    def bind_basis(self, basis: KLBasis) -> None:
        F, dF = basis.scaled_features(self.field_points)
        self._basis_cache = (basis, F, np.ascontiguousarray(dF[:self.nA]))

    def posterior_batch(self, coeffs: np.ndarray, currents: np.ndarray):
        """PMM means (P, J, m) and covariances (P, m, m) for a batch of KL coefficient vectors."""
        if self._basis_cache is None:
            raise RuntimeError("call bind_basis() before posterior_batch()")
        _, F, dF = self._basis_cache
        coeffs = np.atleast_2d(coeffs)
        currents = np.atleast_2d(currents)
        means = np.empty((len(coeffs), len(currents), self.m))
        covs = np.empty((len(coeffs), self.m, self.m))
        thetas = coeffs @ F.T
        grads = np.zeros((len(coeffs), self.n_field, 2))
        grads[:, :self.nA] = np.einsum("fid,pi->pfd", dF, coeffs)

        def one(k):
            try:
                means[k], covs[k] = self.posterior(self.assemble_values(thetas[k], grads[k]), currents)
            except NumericalError as err:
                raise NumericalError(f"particle {k}: {err}") from err

        if self.workers > 1 and len(coeffs) > 1:
            # the Gram kernel and LAPACK release the GIL; results land in fixed slots
            with ThreadPoolExecutor(self.workers) as pool:
                list(pool.map(one, range(len(coeffs))))
        else:
            for k in range(len(coeffs)):
                one(k)
        return means, covs


@numba.njit(cache=True, fastmath=True, nogil=True)
def _flux_gram(X, g, a, nA, amp, s, row, n_rows):
    """Gram block of the interior and flux atoms, summed into functional rows.

    Interior atoms ``i < nA`` carry gradient ``g_i`` and Laplacian weight
    ``a_i``; the remaining atoms carry a gradient only.  Atom ``i``
    contributes to row ``row[i]``.
    """
    n = X.shape[0]
    out = np.zeros((n_rows, n_rows))
    s2 = s * s
    for i in range(n):
        xi0, xi1 = X[i, 0], X[i, 1]
        gi0, gi1 = g[i, 0], g[i, 1]
        ci = a[i] if i < nA else 0.0
        for j in range(i, n):
            r0 = xi0 - X[j, 0]
            r1 = xi1 - X[j, 1]
            rho = r0 * r0 + r1 * r1
            k = amp * np.exp(-0.5 * s * rho)
            gj0, gj1 = g[j, 0], g[j, 1]
            q = gi0 * r0 + gi1 * r1          # g_i . r
            p = gj0 * r0 + gj1 * r1          # g_j . r
            v = s * (gi0 * gj0 + gi1 * gj1) - s2 * q * p
            if i < nA:
                cj = a[j] if j < nA else 0.0
                A = 4.0 * s - s2 * rho
                v += s * A * (q * cj - p * ci)
                v += (s2 * s2 * rho * rho - 8.0 * s2 * s * rho + 8.0 * s2) * ci * cj
            v *= k
            out[row[i], row[j]] += v
            if j != i:
                out[row[j], row[i]] += v
    return out


def _sqdist(x, y):
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)


def clip_psd(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    R = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (R + R.T)


def assemble(design: CollocationDesign, electrodes: Electrodes, kernel: SEKernel, field) -> OperatorSystem:
    return ForwardModel(design, electrodes, kernel).assemble(field)


def pmm_solve(system: OperatorSystem, pattern: StimulationPattern, rel_nugget: float = 1e-8) -> PMMResult:
    fac = factorise(system.G, rel_nugget, exact=(system.gauge_row,))
    rhs = system.rhs(pattern.currents)
    sol = fac.solve(np.column_stack([rhs, system.C.T]))
    return PMMResult(mean=system.C @ sol[:, 0], cov=clip_psd(system.P - system.C @ sol[:, 1:]))


def reference_solve(dense_design: CollocationDesign, electrodes: Electrodes, kernel: SEKernel,
                    field, pattern: StimulationPattern) -> np.ndarray:
    system = assemble(dense_design, electrodes, kernel, field)
    return pmm_solve(system, pattern).mean


def integrated_trace(cov: np.ndarray) -> float:
    return float(np.trace(cov))


def condition_number(system: OperatorSystem) -> float:
    d = 1.0 / np.sqrt(np.diag(system.G))
    return float(np.linalg.cond(system.G * d[:, None] * d[None, :]))


__all__ = [
    "ForwardModel", "NumericalError", "OperatorSystem", "PMMResult", "StimulationPattern",
    "assemble", "pmm_solve", "reference_solve", "clip_psd", "factorise", "integrated_trace",
    "condition_number",
]
