import numpy as np
import pytest

from fputori.series import TrigSeries, COS, SIN


def random_series(rng, dims=(1, 1), caps=(12, 12), n_terms=4,
                  max_deg=2, kmax=1):
    """Random small series whose pairwise/triple products stay within
    caps (so algebraic identities are truncation-free)."""
    n1, n2 = dims
    terms = []
    for _ in range(n_terms):
        while True:
            m = rng.integers(0, 2, n1)
            l = rng.integers(0, max_deg + 1, n2)
            lb = rng.integers(0, max_deg + 1, n2)
            if 2 * m.sum() + l.sum() + lb.sum() <= max_deg:
                break
        k = rng.integers(-kmax, kmax + 1, n1)
        parity = COS if not k.any() else int(rng.integers(0, 2))
        c = float(rng.normal())
        terms.append((list(m), list(l), list(lb), list(k), parity, c))
    return TrigSeries.from_terms(dims, caps, terms)


def random_points(rng, dims, n, scale=0.5):
    n1, n2 = dims
    p = scale * rng.normal(size=(n, n1))
    q = rng.uniform(-np.pi, np.pi, size=(n, n1))
    xi = scale * rng.normal(size=(n, n2))
    eta = scale * rng.normal(size=(n, n2))
    return p, q, xi, eta


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
