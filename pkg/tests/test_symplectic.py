import numpy as np
import pytest

from fputori.series import TrigSeries, SeriesError, COS, evaluate, l1_norm
from fputori.symplectic import (poisson_matrix, quadratic_hessian,
                                symplectic_diagonalize,
                                apply_linear_transverse,
                                EllipticityLost, DegenerateFrequencies)
from conftest import random_series, random_points


def _random_elliptic_hessian(rng, n):
    """S = R^T diag(Om, Om) R with R symplectic (so J S is elliptic)."""
    Om = np.sort(rng.uniform(0.3, 2.0, n))
    while n > 1 and np.min(np.diff(Om)) < 0.05:
        Om = np.sort(rng.uniform(0.3, 2.0, n))
    # random symplectic R via matrix exponential of a Hamiltonian matrix
    from scipy.linalg import expm
    J = poisson_matrix(n)
    A = rng.normal(size=(2 * n, 2 * n)) * 0.3
    Ham = J @ (A + A.T) / 2.0
    R = expm(Ham)
    D = np.diag(np.concatenate([Om, Om]))
    return R.T @ D @ R, Om


def test_hessian_roundtrip():
    dims, caps = (0, 2), (6, 4)
    q = TrigSeries.from_terms(dims, caps, [
        ([], [2, 0], [0, 0], [], COS, 0.7),
        ([], [1, 1], [0, 0], [], COS, 0.2),
        ([], [0, 0], [0, 2], [], COS, 0.5),
        ([], [1, 0], [0, 1], [], COS, -0.3)])
    S = quadratic_hessian(q)
    z = np.array([0.3, -0.2, 0.1, 0.4])
    val = evaluate(q, np.empty((1, 0)), np.empty((1, 0)),
                   z[None, :2], z[None, 2:])
    assert abs(val - 0.5 * z @ S @ z) < 1e-14


def test_hessian_rejects_nonquadratic():
    dims, caps = (0, 1), (6, 4)
    cubic = TrigSeries.from_terms(dims, caps, [([], [3], [0], [], COS, 1.0)])
    with pytest.raises(SeriesError):
        quadratic_hessian(cubic)


def test_diagonalize_recovers_frequencies(rng):
    for n in (1, 2, 3):
        for _ in range(5):
            S, Om = _random_elliptic_hessian(rng, n)
            M, Omega = symplectic_diagonalize(S)
            J = poisson_matrix(n)
            assert np.abs(M.T @ J @ M - J).max() < 1e-10
            D = M.T @ S @ M
            assert np.allclose(np.sort(np.abs(Omega)), Om, atol=1e-8)
            assert np.abs(D - np.diag(np.concatenate([Omega, Omega]))
                          ).max() < 1e-8


def test_diagonalize_rejects_hyperbolic():
    # saddle: Q = xi eta has real eigenvalues of J S
    S = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(EllipticityLost):
        symplectic_diagonalize(S)


def test_diagonalize_rejects_degenerate():
    S = np.diag([1.0, 1.0, 1.0, 1.0])
    with pytest.raises((DegenerateFrequencies, EllipticityLost)):
        symplectic_diagonalize(S)


def test_apply_linear_transverse_pointwise(rng):
    dims, caps = (1, 2), (12, 8)
    from scipy.linalg import expm
    J = poisson_matrix(2)
    A = rng.normal(size=(4, 4)) * 0.4
    M = expm(J @ (A + A.T) / 2.0)
    f = random_series(rng, dims, caps, n_terms=6, max_deg=4, kmax=2)
    g = apply_linear_transverse(f, M)
    p, q, xi, eta = random_points(rng, dims, 20)
    z = np.concatenate([xi, eta], axis=1)
    w = z @ M.T
    lhs = evaluate(g, p, q, xi, eta)
    rhs = evaluate(f, p, q, w[:, :2], w[:, 2:])
    assert np.allclose(lhs, rhs, atol=1e-12 * max(1.0, l1_norm(f)))
