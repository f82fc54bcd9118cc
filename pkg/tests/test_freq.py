import math

import numpy as np
import pytest

from fputori.fpu import (ChainConfig, semi_sinusoidal_ic, modes_forward,
                         mode_frequencies)
from fputori.integrator import IntegratorConfig
from fputori.freq import (FAConfig, hanning_weights, tuning, find_peak,
                          decompose, fundamental_frequencies,
                          frequency_variation, locate_torus,
                          continue_family)


def _times(T=512.0, dt=0.5):
    return np.arange(0.0, T + dt / 2, dt)


def _tone(times, A, u, phi=0.0):
    return A * np.exp(1j * (u * times + phi))


def test_window_integral_is_one():
    t = _times()
    assert abs(hanning_weights(t).sum() - 1.0) < 1e-14


def test_tuning_pure_tone_values():
    t = _times()
    u0 = 0.7
    s = _tone(t, 1.0, u0)
    assert abs(tuning(t, s, u0) - 1.0) < 1e-12
    # one Fourier bin (2 pi/T) off the tone the tuning is exactly 1/2,
    # and the window transform has a zero at 4 pi/T
    du = 2.0 * math.pi / t[-1]
    assert abs(tuning(t, s, u0 + du) - 0.5) < 1e-12
    assert tuning(t, s, u0 + 2 * du) < 1e-12


def test_tuning_far_from_tone_is_small():
    t = _times()
    s = _tone(t, 1.0, 0.7)
    assert tuning(t, s, 2.0) < 1e-6


def test_find_peak_exact_for_pure_tone():
    t = _times(T=1024.0)
    for u0 in (0.31, 0.7654, 1.9):
        s = _tone(t, 1.0, u0, phi=0.4)
        assert abs(find_peak(t, s) - u0) < 1e-13


def test_decompose_two_tones():
    t = _times(T=2048.0)
    s = _tone(t, 1.0, 0.7, 0.3) + _tone(t, 0.3, 1.1, -1.0)
    dec = decompose(t, s, FAConfig(n_components=5))
    comps = sorted(dec.components, key=lambda c: -c.A)[:2]
    assert abs(comps[0].upsilon - 0.7) < 1e-9
    assert abs(comps[1].upsilon - 1.1) < 1e-10
    assert abs(comps[0].A - 1.0) < 1e-7
    assert abs(comps[1].A - 0.3) < 1e-7
    rec = dec.reconstruct(t)
    assert np.abs(rec - s).max() < 1e-6


def test_accuracy_law_quartic_in_T():
    """Peak error shrinks ~16x per doubling of T (phase-averaged to
    smooth the oscillating sidelobe envelope)."""
    sep, A2 = 0.02, 0.6
    u1 = 0.73
    errs = []
    for T in (4096.0, 8192.0, 16384.0):
        t = _times(T=T)
        vals = []
        for phi in np.linspace(0.0, 2 * math.pi, 8, endpoint=False):
            s = _tone(t, 1.0, u1) + _tone(t, A2, u1 + sep, phi)
            vals.append(abs(find_peak(t, s) - u1))
        errs.append(np.exp(np.mean(np.log(vals))))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    for r in ratios:
        assert 8.0 <= r <= 32.0


def test_fundamental_first_rule():
    # (d1): omega_1 is the frequency of the largest component of mode 1
    t = _times(T=1024.0)
    u1 = 0.765
    decs = [decompose(t, _tone(t, 1.0, u1), FAConfig(n_components=3))]
    nu = np.array([u1 + 1e-3])
    fs = fundamental_frequencies(decs, nu, 1, FAConfig())
    assert abs(fs.omega_f[0] - u1) < 1e-10


def test_fundamental_combination_rule():
    """(d4): a transverse mode dominated by a harmonic of omega_1 still
    gets its own fundamental from a secondary component."""
    t = _times(T=2048.0)
    u1, O2 = 0.75, 1.39
    cfgf = FAConfig(n_components=6)
    dec1 = decompose(t, _tone(t, 1.0, u1), cfgf)
    # mode 2: strong 2*omega_1 harmonic plus a weaker genuine line
    s2 = _tone(t, 0.5, 2 * u1, 0.2) + _tone(t, 0.2, O2, -0.4)
    dec2 = decompose(t, s2, cfgf)
    nu = np.array([u1 + 1e-3, O2 + 1e-3])
    # sidelobe cross-talk between the two mode-2 lines shifts the
    # extracted 2*omega_1 harmonic by ~1e-8, so widen the matching
    # tolerance accordingly
    fs = fundamental_frequencies([dec1, dec2], nu, 2,
                                 FAConfig(eps_tol=1e-6))
    assert abs(fs.omega_f[0] - u1) < 1e-10
    assert abs(fs.omega_f[1] - O2) < 1e-8


def test_fundamental_raises_when_modes_missing():
    t = _times(T=512.0)
    dec = decompose(t, np.zeros(len(t), dtype=complex),
                    FAConfig(n_components=2))
    with pytest.raises(ValueError):
        fundamental_frequencies([dec], np.array([0.7]), 1, FAConfig())


def test_frequency_variation_harmonic_is_tiny():
    cfg = ChainConfig(4)
    icfg = IntegratorConfig(duration=1024.0)
    y0, x0 = semi_sinusoidal_ic(cfg, 0.3)
    assert frequency_variation(cfg, y0, x0, icfg) < 1e-12


def test_locate_torus_harmonic_converges_immediately():
    cfg = ChainConfig(4)
    icfg = IntegratorConfig(duration=2048.0)
    y0, x0 = semi_sinusoidal_ic(cfg, 0.3)
    Y0, X0 = modes_forward(cfg, y0, x0)
    res = locate_torus(cfg, Y0, X0, 1, FAConfig(), icfg)
    assert res.converged
    assert res.iterations <= 2
    nu1 = mode_frequencies(cfg)[0]
    assert abs(res.omega_f[0] - nu1) < 1e-6


def test_locate_torus_beta_model():
    cfg = ChainConfig(4, 0.0, 0.25)
    icfg = IntegratorConfig(duration=8192.0)
    y0, x0 = semi_sinusoidal_ic(cfg, 0.2)
    Y0, X0 = modes_forward(cfg, y0, x0)
    res = locate_torus(cfg, Y0, X0, 1, FAConfig(), icfg)
    assert res.converged
    assert res.deviation < 2e-6
    nu1 = mode_frequencies(cfg)[0]
    assert res.omega_f[0] > nu1   # hard potential raises the frequency


def test_continue_family_grows_energy():
    cfg = ChainConfig(4, 0.0, 0.25)
    icfg = IntegratorConfig(duration=8192.0)
    fam = continue_family(cfg, A0=0.2, n1=1, icfg=icfg, zeta0=0.2,
                          zeta_floor=0.02, max_points=3)
    assert len(fam) >= 2
    E = [pt.E_S for pt in fam]
    assert all(E[i] < E[i + 1] for i in range(len(E) - 1))
