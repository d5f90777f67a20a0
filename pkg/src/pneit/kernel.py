"""Squared-exponential kernel, its derivative blocks and a Nystrom KL basis.

All derivative formulas are for the two-dimensional SE kernel
``k(x, y) = amp * exp(-|x - y|^2 / (2 ell^2))`` written in terms of
``r = x - y``, ``rho = |r|^2`` and ``s = 1 / ell^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DIM = 2


@dataclass(frozen=True)
class SEKernel:
    amplitude: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.amplitude > 0 or not self.lengthscale > 0:
            raise ValueError("SE kernel needs positive amplitude and lengthscale")

    @property
    def s(self) -> float:
        return 1.0 / self.lengthscale ** 2

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Cross-covariance matrix between point sets ``x`` (n, 2) and ``y`` (p, 2)."""
        return self.amplitude * np.exp(-0.5 * self.s * sqdist(x, y))

    def grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``d/dx k(x_i, y_j)`` as an (n, p, 2) array."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        r = x[:, None, :] - y[None, :, :]
        K = self.amplitude * np.exp(-0.5 * self.s * (r ** 2).sum(-1))
        return -self.s * r * K[..., None]


def sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ y.T + (y * y).sum(1)[None, :]
    return np.maximum(d2, 0.0)


def se_eval(kernel: SEKernel, x, xp) -> float:
    d = np.asarray(x, float) - np.asarray(xp, float)
    return float(kernel.amplitude * np.exp(-0.5 * kernel.s * d @ d))


@dataclass(frozen=True)
class KernelDerivatives:
    """All derivative blocks of ``k`` at one pair ``(x, x')``."""

    k: float
    grad_x: np.ndarray
    grad_y: np.ndarray
    lap_x: float
    lap_y: float
    grad_x_grad_y: np.ndarray
    grad_x_lap_y: np.ndarray
    lap_x_grad_y: np.ndarray
    lap_x_lap_y: float


def radial_factors(s: float, rho):
    """Polynomial prefactors multiplying ``k`` in the Laplacian blocks.

    Returns ``(L, A, B)`` with ``lap k = L k``, ``grad_x lap_y k = s r A k`` and
    ``lap_x lap_y k = B k``.
    """
    L = s * s * rho - DIM * s
    A = (DIM + 2) * s - s * s * rho
    B = s ** 4 * rho * rho - 2 * (DIM + 2) * s ** 3 * rho + DIM * (DIM + 2) * s * s
    return L, A, B


def se_derivatives(kernel: SEKernel, x, xp) -> KernelDerivatives:
    r = np.asarray(x, float) - np.asarray(xp, float)
    s = kernel.s
    rho = float(r @ r)
    k = kernel.amplitude * np.exp(-0.5 * s * rho)
    L, A, B = radial_factors(s, rho)
    return KernelDerivatives(
        k=k,
        grad_x=-s * r * k,
        grad_y=s * r * k,
        lap_x=L * k,
        lap_y=L * k,
        grad_x_grad_y=(s * np.eye(DIM) - s * s * np.outer(r, r)) * k,
        grad_x_lap_y=s * r * A * k,
        lap_x_grad_y=-s * r * A * k,
        lap_x_lap_y=B * k,
    )


@dataclass(frozen=True, eq=False)
class KLBasis:
    """Truncated Mercer basis of a kernel on a finite grid.

    The grid carries the uniform probability measure; ``vectors[:, i]`` holds
    ``e_i`` at the grid points and ``(1/n) sum_j e_i(z_j) e_k(z_j) = delta_ik``.
    """

    kernel: SEKernel
    grid: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray
    total_trace: float

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def retained_fraction(self) -> float:
        return float(self.eigenvalues.sum() / self.total_trace)

    def eigenfunctions(self, x: np.ndarray) -> np.ndarray:
        """Nystrom extension ``e_i(x)`` as an (n, n_modes) array."""
        Kx = self.kernel(np.atleast_2d(x), self.grid)
        return Kx @ self.vectors / (len(self.grid) * self.eigenvalues)

    def eigenfunction_grads(self, x: np.ndarray) -> np.ndarray:
        """Gradients of the Nystrom extension as an (n, n_modes, 2) array."""
        G = self.kernel.grad_x(np.atleast_2d(x), self.grid)
        return np.einsum("npd,pi->nid", G, self.vectors) / (len(self.grid) * self.eigenvalues)[None, :, None]

    def scaled_features(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``sqrt(lam_i) e_i(x)`` and its gradient; ``theta = features @ coeffs``."""
        sq = np.sqrt(self.eigenvalues)
        return self.eigenfunctions(x) * sq, self.eigenfunction_grads(x) * sq[None, :, None]

    def save(self, path: str | Path) -> None:
        np.savez(path, grid=self.grid, eigenvalues=self.eigenvalues, vectors=self.vectors,
                 total_trace=self.total_trace,
                 kernel=np.array([self.kernel.amplitude, self.kernel.lengthscale]))

    @classmethod
    def load(cls, path: str | Path) -> "KLBasis":
        with np.load(path) as f:
            amp, ell = f["kernel"]
            return cls(SEKernel(float(amp), float(ell)), f["grid"], f["eigenvalues"], f["vectors"],
                       float(f["total_trace"]))


def lattice_in_disc(n: int = 24) -> np.ndarray:
    g = np.linspace(-1, 1, n)
    X, Y = np.meshgrid(g, g)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return pts[np.linalg.norm(pts, axis=1) < 1.0]


def nystrom_eigs(kernel: SEKernel, grid: np.ndarray | None = None, n_modes: int = 32,
                 nugget: float = 1e-10) -> KLBasis:
    grid = lattice_in_disc() if grid is None else np.atleast_2d(np.asarray(grid, float))
    n = len(grid)
    if n < n_modes:
        raise ValueError(f"grid has {n} points but {n_modes} modes were requested")
    K = kernel(grid, grid) + nugget * kernel.amplitude * np.eye(n)
    w, U = np.linalg.eigh(K / n)
    # the nugget shifts the spectrum only; undo it so the extension interpolates
    w = np.clip(w[::-1] - nugget * kernel.amplitude / n, 0.0, None)
    U = U[:, ::-1]
    if w[n_modes - 1] < 1e-12 * w[0]:
        raise ValueError(
            f"n_modes={n_modes} exceeds numerical rank (eigenvalue {w[n_modes - 1]:.3e} "
            f"below 1e-12 of the leading one)")
    return KLBasis(kernel=kernel, grid=grid, eigenvalues=w[:n_modes].copy(),
                   vectors=np.sqrt(n) * U[:, :n_modes], total_trace=float(w.sum()))
