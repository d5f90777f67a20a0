from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import fd_blocks, fd_grad, symbolic_blocks
from pneit.kernel import KLBasis, SEKernel, lattice_in_disc, nystrom_eigs, se_derivatives, se_eval

K_U = SEKernel(100.0, 0.211)
coords = arrays(np.float64, 2, elements=st.floats(-1, 1))


def test_se_eval_values():
    k = SEKernel(1.0, 0.3)
    assert se_eval(k, [0.2, 0.1], [0.2, 0.1]) == 1.0
    assert se_eval(k, [0.0, 0.0], [0.3, 0.0]) == pytest.approx(np.exp(-0.5), rel=1e-15)
    far = [se_eval(k, [0, 0], [r, 0]) for r in np.linspace(0, 5, 50)]
    assert np.all(np.diff(far) < 0)


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        SEKernel(0.0, 1.0)
    with pytest.raises(ValueError):
        SEKernel(1.0, -0.1)


def test_derivatives_match_symbolic():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x, y = rng.uniform(-1, 1, (2, 2))
        an = asdict(se_derivatives(K_U, x, y))
        sy = symbolic_blocks(K_U, x, y)
        for name, val in an.items():
            np.testing.assert_allclose(val, sy[name], rtol=1e-10, atol=1e-12 * K_U.amplitude / K_U.lengthscale ** 4,
                                       err_msg=name)


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.uniform(-0.5, 0.5, 2)
        y = x + rng.normal(0, 0.2, 2)
        an = asdict(se_derivatives(K_U, x, y))
        fd = fd_blocks(K_U, x, y)
        for name, val in an.items():
            scale = np.abs(val).max() + 1e-300
            assert np.abs(np.asarray(val) - fd[name]).max() / scale < 1e-5, name


def test_diagonal_values():
    d = se_derivatives(K_U, [0.3, -0.2], [0.3, -0.2])
    np.testing.assert_array_equal(d.grad_x, 0.0)
    assert d.lap_x_lap_y == pytest.approx(8 * K_U.amplitude / K_U.lengthscale ** 4, rel=1e-13)


@given(coords, coords)
def test_swap_symmetry(x, y):
    a, b = se_derivatives(K_U, x, y), se_derivatives(K_U, y, x)
    np.testing.assert_allclose(a.grad_x, b.grad_y, atol=1e-9)
    np.testing.assert_allclose(a.grad_x_grad_y, b.grad_x_grad_y.T, atol=1e-9)
    np.testing.assert_allclose(a.grad_x_lap_y, b.lap_x_grad_y, atol=1e-7)
    assert np.all(np.isfinite(a.lap_x_lap_y))


def test_vectorised_gradient_matches_fd():
    rng = np.random.default_rng(2)
    x, y = rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, (4, 2))
    G = K_U.grad_x(x, y)
    for i in range(5):
        for j in range(4):
            np.testing.assert_allclose(G[i, j], fd_grad(lambda a: se_eval(K_U, a, y[j]), x[i]),
                                       rtol=1e-6, atol=1e-8)


def test_gram_psd():
    pts = np.random.default_rng(3).uniform(-1, 1, (80, 2))
    K = SEKernel(1.0, 0.3)(pts, pts)
    np.testing.assert_allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * np.trace(K)


def test_nystrom_spectrum_and_orthonormality(basis):
    lam = basis.eigenvalues
    assert np.all(lam > 0) and np.all(np.diff(lam) <= 1e-15)
    E = basis.vectors
    n = len(basis.grid)
    assert np.abs(E.T @ E / n - np.eye(basis.n_modes)).max() < 1e-8
    # the extension reproduces the grid eigenvectors
    np.testing.assert_allclose(basis.eigenfunctions(basis.grid), E, atol=1e-6)


def test_nystrom_reconstruction_at_full_rank():
    k = SEKernel(1.0, 0.3)
    grid = lattice_in_disc(12)
    K = k(grid, grid)
    rank = int((np.linalg.eigvalsh(K / len(grid)) > 1e-12 * np.linalg.eigvalsh(K / len(grid)).max()).sum())
    b = nystrom_eigs(k, grid, n_modes=rank)
    R = (b.vectors * b.eigenvalues) @ b.vectors.T
    assert np.linalg.norm(R - K) / np.linalg.norm(K) < 1e-3


def test_nystrom_rank_error():
    k = SEKernel(1.0, 3.0)
    with pytest.raises(ValueError, match="numerical rank"):
        nystrom_eigs(k, lattice_in_disc(10), n_modes=60)


def test_long_lengthscale_leading_mode_constant():
    b = nystrom_eigs(SEKernel(1.0, 1e3), lattice_in_disc(12), n_modes=1)
    e1 = b.vectors[:, 0]
    assert np.std(e1) / abs(np.mean(e1)) < 1e-3


def test_eigenfunction_gradients_fd(basis):
    x = np.array([[0.21, -0.4], [-0.6, 0.1]])
    G = basis.eigenfunction_grads(x)
    for i in range(2):
        fd = fd_grad(lambda p: basis.eigenfunctions(p[None])[0], x[i])
        np.testing.assert_allclose(G[i], fd.T, rtol=1e-5, atol=1e-7)


def test_basis_roundtrip(tmp_path, basis):
    p = tmp_path / "basis.npz"
    basis.save(p)
    b = KLBasis.load(p)
    assert np.array_equal(b.vectors, basis.vectors)
    assert b.kernel == basis.kernel


def test_default_truncation_trace(basis):
    # 32 modes of the 24 x 24 lattice; see the notes on truncation
    assert basis.n_modes == 32
    assert basis.retained_fraction > 0.98
