import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fputori.series import (TrigSeries, SeriesError, DimensionMismatch,
                            COS, SIN, add, prune, l1_norm, mul, poisson,
                            lie_series, grade, average_over_angles,
                            oscillating_part, sqrt_degrees, trig_degrees,
                            evaluate, diff_q, diff_p, pack_key,
                            unpack_keys, hamiltonian_rhs)
from conftest import random_series, random_points

DIMS = (1, 2)
CAPS = (12, 12)


def _close(f, g, tol=1e-12):
    d = add(f, g.scale(-1.0))
    scale = max(l1_norm(f), l1_norm(g), 1.0)
    return l1_norm(prune(d, tol * scale)) == 0.0


# -- key packing -------------------------------------------------------

@given(st.integers(0, 15), st.integers(0, 15), st.integers(0, 15),
       st.integers(-63, 63), st.integers(0, 1))
def test_pack_unpack_roundtrip(m, l, lb, k, parity):
    key = pack_key([m], [l], [lb], [k], parity, 1, 1)
    mm, ll, llb, kk, pp = unpack_keys(np.array([key], np.int64), 1, 1)
    assert (mm[0][0], ll[0][0], llb[0][0], kk[0][0], pp[0]) == \
        (m, l, lb, k, parity)


def test_key_space_limit():
    with pytest.raises(SeriesError):
        pack_key([0] * 4, [0] * 4, [0] * 4, [0] * 4, COS, 4, 4)


def test_from_terms_canonicalizes_trig():
    # cos(-kq) = cos(kq); sin(-kq) = -sin(kq); sin(0) drops
    f = TrigSeries.from_terms((1, 0), CAPS,
                              [([0], [], [], [-2], COS, 1.0),
                               ([0], [], [], [2], COS, 1.0),
                               ([0], [], [], [-1], SIN, 0.5),
                               ([0], [], [], [1], SIN, -0.5),
                               ([1], [], [], [0], SIN, 7.0)])
    assert len(f) == 2
    vals = {term[3]: term[5] for term in f.terms()}
    assert vals[(2,)] == 2.0 and vals[(1,)] == -1.0


def test_caps_enforced():
    with pytest.raises(SeriesError):
        TrigSeries.from_terms((1, 1), (2, 2), [([0], [3], [0], [0],
                                                COS, 1.0)])


# -- algebra -----------------------------------------------------------

def test_add_is_termwise(rng):
    f = random_series(rng, DIMS, CAPS)
    g = random_series(rng, DIMS, CAPS)
    p, q, xi, eta = random_points(rng, DIMS, 20)
    lhs = evaluate(add(f, g), p, q, xi, eta)
    assert np.allclose(lhs, evaluate(f, p, q, xi, eta)
                       + evaluate(g, p, q, xi, eta), atol=1e-14)


def test_mul_matches_pointwise(rng):
    for _ in range(50):
        f = random_series(rng, DIMS, CAPS)
        g = random_series(rng, DIMS, CAPS)
        p, q, xi, eta = random_points(rng, DIMS, 10)
        lhs = evaluate(mul(f, g), p, q, xi, eta)
        rhs = evaluate(f, p, q, xi, eta) * evaluate(g, p, q, xi, eta)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_norm_submultiplicative(rng):
    for _ in range(200):
        f = random_series(rng, DIMS, CAPS)
        g = random_series(rng, DIMS, CAPS)
        assert l1_norm(mul(f, g)) <= l1_norm(f) * l1_norm(g) + 1e-12


def test_poisson_antisymmetry(rng):
    for _ in range(200):
        f = random_series(rng, DIMS, CAPS)
        g = random_series(rng, DIMS, CAPS)
        assert _close(poisson(f, g), poisson(g, f).scale(-1.0))


def test_poisson_leibniz(rng):
    for _ in range(100):
        f = random_series(rng, DIMS, CAPS)
        g = random_series(rng, DIMS, CAPS)
        h = random_series(rng, DIMS, CAPS)
        lhs = poisson(f, mul(g, h))
        rhs = add(mul(poisson(f, g), h), mul(g, poisson(f, h)))
        assert _close(lhs, rhs)


def test_poisson_jacobi(rng):
    for _ in range(100):
        f = random_series(rng, DIMS, CAPS)
        g = random_series(rng, DIMS, CAPS)
        h = random_series(rng, DIMS, CAPS)
        total = add(add(poisson(f, poisson(g, h)),
                        poisson(g, poisson(h, f))),
                    poisson(h, poisson(f, g)))
        assert _close(total, TrigSeries.zero(DIMS, CAPS))


def test_poisson_canonical_pairs():
    # {q, p} = 1 and {eta, xi} = 1 under the sign convention used
    dims, caps = (1, 1), (4, 4)
    p = TrigSeries.from_terms(dims, caps, [([1], [0], [0], [0], COS, 1.0)])
    cosq = TrigSeries.from_terms(dims, caps, [([0], [0], [0], [1], COS, 1.0)])
    xi = TrigSeries.from_terms(dims, caps, [([0], [1], [0], [0], COS, 1.0)])
    eta = TrigSeries.from_terms(dims, caps, [([0], [0], [1], [0], COS, 1.0)])
    # {cos q, p} = -sin q (since {q,p}=1 and d cos/dq = -sin)
    sinq = TrigSeries.from_terms(dims, caps, [([0], [0], [0], [1], SIN, 1.0)])
    assert _close(poisson(cosq, p), sinq.scale(-1.0))
    assert _close(poisson(eta, xi), TrigSeries.constant(1.0, dims, caps))


def test_poisson_dimension_mismatch(rng):
    f = random_series(rng, (1, 1), CAPS)
    g = random_series(rng, (1, 2), CAPS)
    with pytest.raises(DimensionMismatch):
        poisson(f, g)


# -- grading -----------------------------------------------------------

def test_grade_partition(rng):
    K = 2
    for _ in range(100):
        f = random_series(rng, DIMS, CAPS, n_terms=8, max_deg=4, kmax=5)
        blocks = grade(f, K)
        total = TrigSeries.zero(DIMS, CAPS)
        for (ell, s), blk in blocks.items():
            deg = sqrt_degrees(blk.keys, *DIMS)
            trig = trig_degrees(blk.keys, *DIMS)
            assert np.all(deg == ell)
            assert np.all(trig <= s * K)
            if s > 0:
                assert np.all(trig > (s - 1) * K)
            else:
                assert np.all(trig == 0)
            total = add(total, blk)
        assert _close(total, f, 0.0)


def test_average_oscillating_split(rng):
    f = random_series(rng, DIMS, CAPS, n_terms=8, kmax=3)
    assert _close(add(average_over_angles(f), oscillating_part(f)), f, 0.0)
    assert oscillating_part(average_over_angles(f)).is_zero()


# -- calculus and flows -------------------------------------------------

def test_diff_q_pointwise(rng):
    f = random_series(rng, DIMS, CAPS, n_terms=6, kmax=3)
    p, q, xi, eta = random_points(rng, DIMS, 5)
    eps = 1e-6
    for j in range(DIMS[0]):
        dq = np.zeros_like(q)
        dq[:, j] = eps
        fd = (evaluate(f, p, q + dq, xi, eta)
              - evaluate(f, p, q - dq, xi, eta)) / (2 * eps)
        assert np.allclose(evaluate(diff_q(f, j), p, q, xi, eta), fd,
                           atol=1e-7)


def test_lie_series_polynomial_terminates():
    dims, caps = (0, 1), (6, 0)
    xi = TrigSeries.from_terms(dims, caps, [([], [1], [0], [], COS, 1.0)])
    chi = TrigSeries.from_terms(dims, caps, [([], [0], [2], [], COS, 0.5)])
    out = lie_series(xi, chi)
    # {xi, eta^2/2} contributions shift xi -> xi + eta (linear flow)
    assert len(out) == 2


def test_lie_series_matches_flow(rng):
    # exchange oracle: exp(L_chi) f at z equals f at the time-1 flow
    from scipy.integrate import solve_ivp
    dims, caps = (1, 1), (14, 12)
    for trial in range(5):
        # chi of sqrt-degree 3 so every bracket raises the degree and
        # the Lie series terminates at the cap
        terms = []
        for _ in range(3):
            l = int(rng.integers(0, 2))
            k = int(rng.integers(-1, 2))
            par = COS if k == 0 else int(rng.integers(0, 2))
            terms.append(([0], [l], [3 - l], [k], par,
                          float(rng.normal())))
        chi = TrigSeries.from_terms(dims, caps, terms).scale(0.02)
        f = random_series(rng, dims, caps, n_terms=3)
        g = lie_series(f, chi, caps)
        rhs = hamiltonian_rhs(chi)

        def ode(t, z):
            out = rhs(z[:1], z[1:2], z[2:3], z[3:])
            return np.concatenate(out)

        p, q, xi, eta = random_points(rng, dims, 4, scale=0.2)
        for i in range(4):
            z0 = np.array([p[i, 0], q[i, 0], xi[i, 0], eta[i, 0]])
            sol = solve_ivp(ode, (0.0, 1.0), z0, rtol=1e-12, atol=1e-14,
                            method="DOP853")
            zf = sol.y[:, -1]
            lhs = evaluate(g, [z0[0]], [z0[1]], [z0[2]], [z0[3]])
            rhs_val = evaluate(f, [zf[0]], [zf[1]], [zf[2]], [zf[3]])
            assert abs(lhs - rhs_val) < 1e-8 * max(1.0, abs(rhs_val))


# -- serialization ------------------------------------------------------

def test_text_roundtrip_bit_exact(rng):
    f = random_series(rng, DIMS, CAPS, n_terms=10, max_deg=4, kmax=4)
    g = TrigSeries.from_text(f.to_text())
    assert np.array_equal(f.keys, g.keys)
    assert np.array_equal(f.coeffs, g.coeffs)
