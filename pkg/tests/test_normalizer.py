import numpy as np
import pytest

from fputori.series import (TrigSeries, COS, SIN, add, poisson, prune,
                            l1_norm, evaluate)
from fputori.fpu import (ChainConfig, TorusSeed, assemble_H0,
                         GradedHamiltonian, modes_forward, modes_backward,
                         total_energy, semi_sinusoidal_ic)
from fputori import normalizer as nz

DIMS = (1, 1)
CAPS = (8, 24)


def _H(omega, Omega, blocks):
    return GradedHamiltonian(DIMS, 2, CAPS, np.array([omega]),
                             np.array([Omega]), 0.0, blocks)


def _p_series():
    return TrigSeries.from_terms(DIMS, CAPS, [([1], [0], [0], [0],
                                               COS, 1.0)])


# -- stage solvers on pinned examples -----------------------------------

def test_solve_chi0_pinned():
    # f0 = 0.5 cos 2q + 0.3 sin q with omega = 1
    f0 = TrigSeries.from_terms(DIMS, CAPS, [([0], [0], [0], [2], COS, 0.5),
                                            ([0], [0], [0], [1], SIN, 0.3)])
    H = _H(1.0, 0.5, {(0, 1): f0})
    chi0, e_inc, min_div = nz.solve_chi0(H, 1)
    got = {(t[3], t[4]): t[5] for t in chi0.terms()}
    assert abs(got[((2,), SIN)] + 0.25) < 1e-15
    assert abs(got[((1,), COS)] - 0.3) < 1e-15
    assert abs(e_inc) < 1e-15     # no angle average in f0
    assert abs(min_div - 1.0) < 1e-15
    # homological equation: {chi0, omega p} + f0 = 0
    res = add(poisson(chi0, _p_series()), f0)
    assert l1_norm(res) == 0.0


def test_solve_chi1_pinned():
    f1 = TrigSeries.from_terms(DIMS, CAPS, [([0], [1], [0], [1], COS, 1.0)])
    H = _H(1.0, 0.5, {(1, 1): f1})
    chi1, min_div = nz.solve_chi1(H, 1)
    res = add(poisson(chi1, nz._normal_quadratic(H)), f1)
    assert l1_norm(prune(res, 1e-14)) == 0.0
    got = {(t[1], t[2], t[4]): t[5] for t in chi1.terms()}
    # solution -(4/3) xi sin q + (2/3) eta cos q
    assert abs(got[((1,), (0,), SIN)] + 4.0 / 3.0) < 1e-12
    assert abs(got[((0,), (1,), COS)] - 2.0 / 3.0) < 1e-12


def test_solve_X2_pinned():
    f2 = TrigSeries.from_terms(DIMS, CAPS, [([1], [0], [0], [1], COS, 1.0)])
    H = _H(1.0, 0.5, {(2, 1): f2})
    x2, min_div = nz.solve_X2(H, 1)
    got = list(x2.terms())
    assert len(got) == 1
    m, l, lb, k, parity, c = got[0]
    assert (m, k, parity) == ((1,), (1,), SIN) and abs(c + 1.0) < 1e-15


def test_solve_Y2_resonant_raises():
    # divisor k.omega - 2 Omega = 1 - 1 = 0
    f2 = TrigSeries.from_terms(DIMS, CAPS, [([0], [1], [1], [1], COS, 1.0)])
    H = _H(1.0, 0.5, {(2, 1): f2})
    with pytest.raises(nz.SmallDivisor):
        nz.solve_Y2(H, 1)


def test_solve_Y2_nonresonant():
    f2 = TrigSeries.from_terms(DIMS, CAPS, [([0], [1], [1], [1], COS, 1.0)])
    H = _H(1.0, 0.3, {(2, 1): f2})
    y2, min_div = nz.solve_Y2(H, 1)
    res = add(poisson(y2, nz._normal_quadratic(H)), f2)
    assert l1_norm(prune(res, 1e-14 * l1_norm(y2))) == 0.0
    assert abs(min_div - abs(1.0 - 2 * 0.3)) < 1e-12


# -- convergence rules ---------------------------------------------------

def test_check_rules_decay_passes():
    cfg = nz.NormalizerConfig(rbar=6, caps=CAPS)
    norms = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8]
    ok, reason = nz.check_rules(norms, cfg)
    assert ok


def test_check_rules_flat_fails():
    cfg = nz.NormalizerConfig(rbar=6, caps=CAPS)
    norms = [0.5, 0.6, 0.5, 0.7, 0.6, 0.5]
    ok, reason = nz.check_rules(norms, cfg)
    assert not ok


def test_check_rules_zero_perturbation_is_convergent():
    cfg = nz.NormalizerConfig(rbar=4, caps=CAPS)
    ok, _ = nz.check_rules([0.0, 0.0, 0.0, 0.0], cfg)
    assert ok


# -- full runs -----------------------------------------------------------

def test_harmonic_chain_is_noop():
    cfg = ChainConfig(4, 0.0, 0.0)
    seed = TorusSeed(1, (0.1,))
    H0 = assemble_H0(cfg, seed, CAPS)
    res = nz.run(H0, nz.NormalizerConfig(rbar=6, caps=CAPS), seed)
    assert res.converged
    assert all(v < 1e-14 for v in res.H.block_norms().values())


@pytest.fixture(scope="module")
def beta_run():
    cfg = ChainConfig(4, 0.0, 0.25)
    seed = TorusSeed(1, (0.05,))
    H0 = assemble_H0(cfg, seed, CAPS)
    res = nz.run(H0, nz.NormalizerConfig(rbar=8, caps=CAPS), seed,
                 keep_intermediate=True)
    return cfg, seed, res


def test_beta_run_converges(beta_run):
    _, _, res = beta_run
    assert res.converged
    x2 = [r.norms["x2"] for r in res.reports if r.norms["x2"] > 0]
    assert x2[-1] < 1e-3 * x2[0]


def test_beta_run_residuals_empty(beta_run):
    _, _, res = beta_run
    for rep in res.reports:
        assert all(v == 0.0 for v in rep.residuals.values())


def test_exchange_identity_per_step(beta_run):
    """H_r(z) = H_{r-1}(psi_r(z)) at random points, per step."""
    _, _, res = beta_run
    rng = np.random.default_rng(12)
    n1, n2 = res.H.dims
    pts = np.concatenate([1e-3 * rng.normal(size=(20, n1)),
                          rng.uniform(-np.pi, np.pi, size=(20, n1)),
                          0.03 * rng.normal(size=(20, 2 * n2))], axis=1)

    def split(z):
        return (z[:, :n1], z[:, n1:2 * n1], z[:, 2 * n1:2 * n1 + n2],
                z[:, 2 * n1 + n2:])

    # entries[0] is the assembly pre-map; steps start at entries[1]
    for r, maps in enumerate(res.stack.entries[1:], start=1):
        H_prev = res.intermediates[r - 1]
        H_next = res.intermediates[r]
        old = nz.step_map_points(maps, pts, n1, n2)
        lhs = evaluate(H_next.total_series(), *split(pts))
        rhs = evaluate(H_prev.total_series(), *split(old))
        scale = np.abs(rhs).max()
        assert np.abs(lhs - rhs).max() < 1e-6 * max(scale, 1e-12)


def test_step_map_roundtrip(beta_run):
    _, _, res = beta_run
    rng = np.random.default_rng(13)
    n1, n2 = res.H.dims
    pts = np.concatenate([1e-3 * rng.normal(size=(5, n1)),
                          rng.uniform(-np.pi, np.pi, size=(5, n1)),
                          0.03 * rng.normal(size=(5, 2 * n2))], axis=1)
    maps = res.stack.entries[1]
    back = nz.step_map_points(maps,
                              nz.step_map_points(maps, pts, n1, n2),
                              n1, n2, inverse=True)
    assert np.abs(back - pts).max() < 1e-12


def test_map_to_original_energy(beta_run):
    """A normal-form point on the torus maps to a mode state whose
    chain energy matches the normal-form energy."""
    cfg, _, res = beta_run
    Y, X = nz.map_to_original(res.stack, np.array([0.0, 0.7, 0.0, 0.0,
                                                   0.0, 0.0]))
    y, x = modes_backward(cfg, Y, X)
    assert abs(total_energy(cfg, y, x) - res.H.energy) \
        < 1e-10 * max(abs(res.H.energy), 1.0)


def test_map_roundtrip_through_original(beta_run):
    cfg, _, res = beta_run
    z = np.array([1e-4, 0.4, 0.01, -0.02, 0.015, 0.005])
    Y, X = nz.map_to_original(res.stack, z)
    back = nz.map_from_original(res.stack, Y, X)
    assert np.abs(back - z).max() < 1e-10


def test_stack_serialization_bit_exact(beta_run):
    _, _, res = beta_run
    text = res.stack.to_text()
    stack2 = nz.TransformStack.from_text(text)
    assert stack2.dims == res.stack.dims
    assert stack2.Istar == tuple(res.stack.Istar)
    for a, b in zip(res.stack.entries, stack2.entries):
        for name in ("chi0", "chi1", "x2", "y2"):
            sa, sb = getattr(a, name), getattr(b, name)
            if sa is None or len(sa) == 0:
                assert sb is None or len(sb) == 0
            else:
                assert np.array_equal(sa.keys, sb.keys)
                assert np.array_equal(sa.coeffs, sb.coeffs)
        if a.linear is None:
            assert b.linear is None
        else:
            assert np.array_equal(a.linear, b.linear)


def test_frequencies_shift_with_nonlinearity(beta_run):
    """Hard quartic potential raises omega_1 above the harmonic nu_1."""
    cfg, _, res = beta_run
    from fputori.fpu import mode_frequencies
    assert res.H.omega[0] > mode_frequencies(cfg)[0]
