"""Frequency analysis of quasi-periodic mode signals.

A signal is a uniformly sampled complex sequence s(i Delta) = Y + iX.
The tuning function T(u) = |(1/T) int_0^T s(t) e^{-iut} W(t) dt| with
Hanning window W(t) = 1 + cos(pi (2t/T - 1)) is maximized on a coarse
FFT grid (spacing pi/T) and refined by bounded scalar minimization.
Components are extracted iteratively with Gram-Schmidt
re-orthogonalization under the windowed inner product; fundamental
angular velocities follow the selection rules (largest unexplained
summand, integer-combination matching against a priori frequencies).
"""

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .fpu import mode_frequencies, total_energy, modes_backward, \
    semi_sinusoidal_ic
from .integrator import integrate, IntegratorConfig, IntegrationBlowUp


@dataclass
class FAConfig:
    n_components: int = 25
    K_M: int = 20
    eps_tol: float = 1e-12
    mu_tol: float = 2e-6
    max_refine_iters: int = 20
    eps_filter: float = None   # tolerance for the harmonic filter (e);
                               # defaults to 1e-8: measured component
                               # frequencies carry sidelobe cross-talk
                               # of that size, so matching them against
                               # k.omega_f at the commensurability
                               # tolerance would drop real harmonics

    def __post_init__(self):
        if self.n_components < 1 or self.K_M < 1:
            raise ValueError("n_components and K_M must be >= 1")
        if self.eps_filter is None:
            self.eps_filter = 1e-8


@dataclass
class Component:
    A: float
    upsilon: float
    phi: float


@dataclass
class Decomposition:
    components: list

    @property
    def amplitudes(self):
        return np.array([c.A for c in self.components])

    def reconstruct(self, times):
        out = np.zeros(len(times), dtype=complex)
        for c in self.components:
            out += c.A * np.exp(1j * (c.upsilon * times + c.phi))
        return out


@dataclass
class FundamentalSet:
    omega_f: np.ndarray
    provenance: list = field(default_factory=list)


def hanning_weights(times):
    T = times[-1]
    W = 1.0 + np.cos(math.pi * (2.0 * times / T - 1.0))
    trap = np.ones(len(times))
    trap[0] = trap[-1] = 0.5
    return W * trap * (times[1] - times[0]) / T


def tuning(times, values, upsilon):
    w = hanning_weights(times)
    u = np.atleast_1d(np.asarray(upsilon, dtype=float))
    res = np.abs(np.exp(-1j * np.outer(u, times)) @ (w * values))
    return float(res[0]) if np.isscalar(upsilon) else res


def _coarse_peaks(times, values):
    """Tuning samples on the pi/T grid via zero-padded FFT."""
    w = hanning_weights(times)
    g = w * values
    n = len(times)
    F = np.fft.fft(g, 2 * n)
    freqs = 2.0 * math.pi * np.fft.fftfreq(2 * n, d=times[1] - times[0])
    return freqs, np.abs(F)


def find_peak(times, values, bracket=None):
    """Angular velocity maximizing the tuning function."""
    freqs, amps = _coarse_peaks(times, values)
    if bracket is not None:
        sel = (freqs >= bracket[0]) & (freqs <= bracket[1])
        if not np.any(sel):
            raise ValueError("empty bracket")
        freqs, amps = freqs[sel], amps[sel]
    k = int(np.argmax(amps))
    du = math.pi / times[-1]
    u0 = freqs[k]
    return _refine_peak(times, values, u0, du)


def _refine_peak(times, values, u0, du):
    """Newton iterations on d|S|^2/du = 0 for S(u) = sum w s e^{-iut},
    safeguarded to stay within [u0 - du, u0 + du]."""
    w = hanning_weights(times)
    g = w * values
    tg = times * g
    ttg = times * tg
    u = u0
    for _ in range(60):
        ph = np.exp(-1j * u * times)
        S = ph @ g
        S1 = -1j * (ph @ tg)
        S2 = -(ph @ ttg)
        f1 = 2.0 * (np.conj(S) * S1).real
        f2 = 2.0 * ((np.conj(S) * S2).real + abs(S1) ** 2)
        if f2 >= 0.0:
            break
        step = -f1 / f2
        u_new = min(max(u + step, u0 - du), u0 + du)
        if abs(u_new - u) <= 1e-15 * max(abs(u_new), 1e-3):
            u = u_new
            break
        u = u_new
    return float(u)


def _inner(w, f, g):
    return np.sum(w * f * np.conj(g))


def decompose(times, values, cfg=None):
    """Iterative NAFF extraction of up to n_components tones."""
    if cfg is None:
        cfg = FAConfig()
    w = hanning_weights(times)
    resid = np.array(values, dtype=complex)
    scale = math.sqrt(abs(_inner(w, values, values).real)) or 1.0
    ups, basis = [], []
    for _ in range(cfg.n_components):
        if math.sqrt(abs(_inner(w, resid, resid).real)) < 1e-14 * scale:
            break
        u = find_peak(times, resid)
        if any(abs(u - v) < 0.1 * math.pi / times[-1] for v in ups):
            break                        # near-duplicate frequency
        e = np.exp(1j * u * times)
        b = e.copy()
        for ob in basis:
            b = b - _inner(w, b, ob) * ob
        nb = math.sqrt(abs(_inner(w, b, b).real))
        if nb < 1e-8:
            break                        # degenerate projection
        b = b / nb
        resid = resid - _inner(w, resid, b) * b
        ups.append(u)
        basis.append(b)
    if not ups:
        return Decomposition([])
    # amplitudes/phases from a windowed least-squares fit on the raw
    # exponentials (the Gram-Schmidt pass only fixes the frequencies)
    E = np.exp(1j * np.outer(times, ups))
    G = (E.conj().T * w) @ E
    rhs = (E.conj().T * w) @ values
    coef = np.linalg.solve(G, rhs)
    comps = [Component(abs(c), u, float(np.angle(c)) % (2 * math.pi))
             for c, u in zip(coef, ups)]
    comps.sort(key=lambda c: -c.A)
    return Decomposition(comps)


def _combinations(dim, K_M):
    """Integer vectors with |k|_1 <= K_M (cached per (dim, K_M))."""
    key = (dim, K_M)
    if key not in _combinations._cache:
        ks = [np.array(k) for k in product(range(-K_M, K_M + 1),
                                           repeat=dim)
              if sum(abs(v) for v in k) <= K_M]
        _combinations._cache[key] = np.array(ks).reshape(-1, dim)
    return _combinations._cache[key]


_combinations._cache = {}


def _wrapped_dist(diff, wrap):
    """|diff| reduced modulo wrap into [0, wrap/2].

    Sampled signals only determine angular velocities modulo the
    sampling circle 2 pi / Delta, so harmonics k.omega beyond the
    Nyquist velocity pi / Delta show up aliased; frequency matching
    must respect that.
    """
    d = np.abs(diff)
    if wrap is None:
        return d
    d = d % wrap
    return np.minimum(d, wrap - d)


def _explained(u, omega, K_M, tol, wrap=None):
    if len(omega) == 0:
        return abs(u) <= tol
    ks = _combinations(len(omega), K_M)
    return bool(np.any(
        _wrapped_dist(u - ks @ np.asarray(omega), wrap) <= tol))


def fundamental_frequencies(decomps, nu_prior, n1, cfg=None, wrap=None):
    """Fundamental angular velocities from per-mode decompositions.

    decomps[j] is the Decomposition of mode j+1; nu_prior gives the a
    priori frequencies used for the integer-combination matching (or
    None entries to take the raw selected velocity).
    """
    if cfg is None:
        cfg = FAConfig()
    if not decomps or not decomps[0].components:
        raise ValueError("empty decomposition for mode 1")
    omega = [decomps[0].components[0].upsilon]
    prov = [(1, 1, (1,))]
    j = 1
    while len(omega) < n1 and j < len(decomps):
        found = None
        for s, comp in enumerate(decomps[j].components):
            if not _explained(comp.upsilon, omega, cfg.K_M, cfg.eps_tol,
                              wrap):
                found = (s, comp.upsilon)
                break
        j += 1
        if found is None:
            continue
        sbar, u = found
        prior = nu_prior[j - 1] if nu_prior is not None else None
        if prior is None:
            omega.append(u)
            prov.append((j, sbar + 1, None))
            continue
        dim = len(omega) + 1
        ks = _combinations(dim, cfg.K_M)
        ks = ks[ks[:, -1] != 0]
        vals = ks[:, :-1] @ np.asarray(omega) + ks[:, -1] * u
        best = int(np.argmin(np.abs(vals - prior)))
        omega.append(float(vals[best]))
        prov.append((j, sbar + 1, tuple(int(v) for v in ks[best])))
    if len(omega) < n1:
        raise ValueError(
            f"only {len(omega)} independent frequencies found "
            f"(expected {n1}): signals are effectively "
            "lower-dimensional")
    return FundamentalSet(np.array(omega), prov)


def frequency_variation(cfg_chain, y0, x0, icfg=None, cfg=None):
    """|change of the first fundamental velocity| between [0, T] and
    [T, 2T]; small values indicate regular motion."""
    if icfg is None:
        icfg = IntegratorConfig()
    T = icfg.duration
    full = IntegratorConfig(icfg.h, icfg.scheme, icfg.sample_interval,
                            2 * T)
    sig = integrate(cfg_chain, full, y0, x0)
    s1 = sig.window(0.0, T)
    s2 = sig.window(T, 2 * T)
    u1 = find_peak(s1.times, s1.values[0])
    u2 = find_peak(s2.times, s2.values[0])
    return abs(u1 - u2)


@dataclass
class LocateResult:
    converged: bool
    Y0: np.ndarray
    X0: np.ndarray
    omega_f: np.ndarray
    energy: float
    iterations: int
    deviation: float


def locate_torus(cfg_chain, Y0, X0, n1, cfg=None, icfg=None):
    """Iterative refinement of an initial condition toward an
    n1-dimensional elliptic torus (points (a)-(f))."""
    if cfg is None:
        cfg = FAConfig()
    if icfg is None:
        icfg = IntegratorConfig()
    nu = mode_frequencies(cfg_chain)
    Y0 = np.array(Y0, dtype=float)
    X0 = np.array(X0, dtype=float)
    omega_f = None
    deviation = math.inf
    for it in range(1, cfg.max_refine_iters + 1):
        y0, x0 = modes_backward(cfg_chain, Y0, X0)
        try:
            sig = integrate(cfg_chain, icfg, y0, x0)
        except IntegrationBlowUp:
            return LocateResult(False, Y0, X0,
                                omega_f if omega_f is not None
                                else np.full(n1, np.nan),
                                math.nan, it, math.inf)
        decomps = [decompose(sig.times, sig.values[j], cfg)
                   for j in range(cfg_chain.N - 1)]
        wrap = 2.0 * math.pi / icfg.sample_interval
        fs = fundamental_frequencies(decomps, nu, n1, cfg, wrap)
        omega_f = fs.omega_f
        ks = _combinations(n1, cfg.K_M)
        A11 = decomps[0].components[0].A
        dev = 0.0
        newY = np.empty_like(Y0)
        newX = np.empty_like(X0)
        for j in range(cfg_chain.N - 1):
            kept = [c for c in decomps[j].components
                    if np.any(_wrapped_dist(c.upsilon - ks @ omega_f,
                                            wrap) <= cfg.eps_filter)]
            rec = Decomposition(kept).reconstruct(sig.times)
            dev = max(dev, np.max(np.abs(sig.values[j] - rec)) / A11)
            z0 = Decomposition(kept).reconstruct(np.zeros(1))[0]
            newY[j], newX[j] = z0.real, z0.imag
        Y0, X0 = newY, newX
        deviation = dev
        if dev <= cfg.mu_tol:
            y0, x0 = modes_backward(cfg_chain, Y0, X0)
            return LocateResult(True, Y0, X0, omega_f,
                                total_energy(cfg_chain, y0, x0), it, dev)
    return LocateResult(False, Y0, X0, omega_f, math.nan,
                        cfg.max_refine_iters, deviation)


@dataclass
class FamilyPoint:
    E_S: float
    omega_f: np.ndarray
    Y0: np.ndarray
    X0: np.ndarray


def continue_family(cfg_chain, A0=0.1, n1=1, cfg=None, icfg=None,
                    zeta0=0.1, zeta_floor=0.00025, max_points=2000):
    """Numerical continuation of a torus family in energy.

    Starts from a small semi-sinusoidal amplitude; after each success
    the located initial condition is rescaled by (1 + zeta); each
    failure halves zeta; stops when zeta < zeta_floor.
    """
    y0, x0 = semi_sinusoidal_ic(cfg_chain, A0)
    from .fpu import modes_forward
    Y0, X0 = modes_forward(cfg_chain, y0, x0)
    family = []
    zeta = zeta0
    while zeta >= zeta_floor and len(family) < max_points:
        res = locate_torus(cfg_chain, Y0, X0, n1, cfg, icfg)
        if res.converged:
            family.append(FamilyPoint(res.energy / cfg_chain.N,
                                      res.omega_f, res.Y0, res.X0))
            Y0 = (1.0 + zeta) * res.Y0
            X0 = (1.0 + zeta) * res.X0
        else:
            zeta *= 0.5
            if family:
                Y0 = (1.0 + zeta) * family[-1].Y0
                X0 = (1.0 + zeta) * family[-1].X0
            else:
                Y0 = Y0 / (1.0 + zeta)
                X0 = X0 / (1.0 + zeta)
    return family
