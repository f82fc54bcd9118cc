"""FPU chain model: normal modes, energies, and the expanded graded
Hamiltonian around a translated torus of actions I*.

Chain of N+1 particles with fixed ends (x_0 = x_N = 0):

    H(y, x) = 1/2 sum_j [y_j^2 + (x_{j+1}-x_j)^2]
              + alpha/3 sum (x_{j+1}-x_j)^3 + beta/4 sum (x_{j+1}-x_j)^4.

Normal modes X_j, Y_j diagonalize the quadratic part with frequencies
nu_j = 2 sin(j pi / 2N).  The first n1 modes are put in action-angle
form X_j = sqrt(2 I_j) sin q_j, Y_j = sqrt(2 I_j) cos q_j, actions are
translated p = I - I*, and sqrt(I* + p) is expanded binomially; the
remaining modes keep cartesian pairs (xi_j, eta_j) = (Y, X).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .series import (TrigSeries, SeriesError, COS, SIN, add, mul, grade,
                     l1_norm, average_over_angles, trig_degrees,
                     sqrt_degrees, unpack_keys)
from .symplectic import (quadratic_hessian, symplectic_diagonalize,
                         apply_linear_transverse)


@dataclass(frozen=True)
class ChainConfig:
    N: int
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")


@dataclass(frozen=True)
class TorusSeed:
    n1: int
    Istar: tuple

    def __post_init__(self):
        if any(v <= 0 for v in self.Istar):
            raise ValueError("I* components must be positive")
        if len(self.Istar) != self.n1:
            raise ValueError("I* length must equal n1")


def mode_frequencies(cfg):
    j = np.arange(1, cfg.N)
    return 2.0 * np.sin(j * np.pi / (2 * cfg.N))


def sine_matrix(cfg):
    """Orthogonal discrete sine transform, S[l-1, j-1] = sqrt(2/N) sin(jl pi/N)."""
    N = cfg.N
    l = np.arange(1, N)[:, None]
    j = np.arange(1, N)[None, :]
    return np.sqrt(2.0 / N) * np.sin(j * l * np.pi / N)


def modes_forward(cfg, y, x):
    """Cartesian (y, x) interior vectors -> mode state (Y, X)."""
    S = sine_matrix(cfg)
    nu = mode_frequencies(cfg)
    Y = (S.T @ np.asarray(y)) / np.sqrt(nu)
    X = (S.T @ np.asarray(x)) * np.sqrt(nu)
    return Y, X


def modes_backward(cfg, Y, X):
    S = sine_matrix(cfg)
    nu = mode_frequencies(cfg)
    y = S @ (np.asarray(Y) * np.sqrt(nu))
    x = S @ (np.asarray(X) / np.sqrt(nu))
    return y, x


def total_energy(cfg, y, x):
    y = np.asarray(y, dtype=float)
    dx = np.diff(np.concatenate([[0.0], np.asarray(x, dtype=float), [0.0]]))
    return float(0.5 * (y @ y) + 0.5 * (dx @ dx)
                 + cfg.alpha / 3.0 * (dx ** 3).sum()
                 + cfg.beta / 4.0 * (dx ** 4).sum())


def specific_energy(cfg, y, x):
    return total_energy(cfg, y, x) / cfg.N


def semi_sinusoidal_ic(cfg, A):
    """State with only the first mode excited: X_1 = A, all else zero."""
    if A < 0:
        raise ValueError("amplitude must be >= 0")
    X = np.zeros(cfg.N - 1)
    X[0] = A
    return modes_backward(cfg, np.zeros(cfg.N - 1), X)


# -- exact mode-coupling expansion ------------------------------------

def _signed_cosine_sum(js, N):
    """sum_{l=0}^{N-1} prod_i cos((2l+1) j_i pi / (2N)), exactly.

    Expanding the cosine product over sign choices, each signed
    combination J = j_1 +- j_2 +- ... contributes N (-1)^t when
    J = 2Nt for integer t, and 0 otherwise.
    """
    c = len(js)
    total = 0
    for mask in range(1 << (c - 1)):
        J = js[0]
        for i in range(1, c):
            J += js[i] if (mask >> (i - 1)) & 1 == 0 else -js[i]
        if J % (2 * N) == 0:
            t = J // (2 * N)
            total += N * (-1) ** t
    return total / 2.0 ** (c - 1)


def _coupling_terms(cfg, degree):
    """Monomial coefficients of the degree-3 or degree-4 part in X."""
    N = cfg.N
    nu = mode_frequencies(cfg)
    pref = {3: cfg.alpha / 3.0 * (2.0 / N) ** 1.5,
            4: cfg.beta / 4.0 * (2.0 / N) ** 2}[degree]
    if pref == 0.0:
        return {}
    sq = np.sqrt(nu)
    acc = {}
    idx = [0] * degree

    def rec(pos, start):
        if pos == degree:
            js = [i + 1 for i in idx[:degree]]
            ssum = _signed_cosine_sum(js, N)
            if ssum == 0.0:
                return
            mult = math.factorial(degree)
            for r in set(idx):
                mult //= math.factorial(idx.count(r))
            coeff = pref * mult * ssum * float(np.prod(sq[idx]))
            expo = [0] * (N - 1)
            for i in idx:
                expo[i] += 1
            key = tuple(expo)
            acc[key] = acc.get(key, 0.0) + coeff
            return
        for i in range(start, N - 1):
            idx[pos] = i
            rec(pos + 1, i)

    rec(0, 0)
    return {k: v for k, v in acc.items() if v != 0.0}


def hamiltonian_in_modes(cfg):
    """H as a polynomial series in mode variables, no angles.

    Representation: dims (0, N-1) with xi_j = Y_j and eta_j = X_j.
    """
    n = cfg.N - 1
    dims = (0, n)
    caps = (4, 0)
    nu = mode_frequencies(cfg)
    terms = []
    for j in range(n):
        lq = [0] * n
        lq[j] = 2
        terms.append(([], lq, [0] * n, [], COS, nu[j] / 2.0))
        terms.append(([], [0] * n, lq, [], COS, nu[j] / 2.0))
    for degree in (3, 4):
        for expo, c in sorted(_coupling_terms(cfg, degree).items()):
            terms.append(([], [0] * n, list(expo), [], COS, c))
    return TrigSeries.from_terms(dims, caps, terms)


# -- graded Hamiltonian ------------------------------------------------

@dataclass
class GradedHamiltonian:
    """Normal part (omega, Omega, energy) plus graded perturbation blocks.

    blocks maps (ell, s) -> TrigSeries where ell is the total degree in
    the square root of the actions and s the trig block index; every
    block term satisfies |k| <= s K.  Blocks with ell <= 2, s = 0 are
    absorbed into the normal part.
    """
    dims: tuple
    K: int
    caps: tuple
    omega: np.ndarray
    Omega: np.ndarray
    energy: float
    blocks: dict
    pre_map: np.ndarray = None

    def copy(self):
        return GradedHamiltonian(self.dims, self.K, self.caps,
                                 self.omega.copy(), self.Omega.copy(),
                                 self.energy, dict(self.blocks),
                                 self.pre_map)

    def normal_part(self):
        n1, n2 = self.dims
        terms = []
        if self.energy != 0.0:
            terms.append(([0] * n1, [0] * n2, [0] * n2, [0] * n1, COS,
                          self.energy))
        for j in range(n1):
            m = [0] * n1
            m[j] = 1
            terms.append((m, [0] * n2, [0] * n2, [0] * n1, COS,
                          self.omega[j]))
        for j in range(n2):
            l = [0] * n2
            l[j] = 2
            terms.append(([0] * n1, l, [0] * n2, [0] * n1, COS,
                          self.Omega[j] / 2.0))
            terms.append(([0] * n1, [0] * n2, l, [0] * n1, COS,
                          self.Omega[j] / 2.0))
    # (xi^2 + eta^2)/2 per transverse mode
        return TrigSeries.from_terms(self.dims, self.caps, terms)

    def perturbation(self):
        total = TrigSeries.zero(self.dims, self.caps)
        for key in sorted(self.blocks):
            total = add(total, self.blocks[key])
        return total

    def total_series(self):
        return add(self.normal_part(), self.perturbation())

    def block_norms(self):
        return {key: l1_norm(blk) for key, blk in sorted(self.blocks.items())
                if len(blk)}


def _trig_power_series(j, ncos, nsin, dims, caps):
    """cos^ncos(q_j) sin^nsin(q_j) as a series."""
    n1, n2 = dims
    k = [0] * n1
    k[j] = 1
    out = TrigSeries.constant(1.0, dims, caps)
    cosq = TrigSeries.from_terms(dims, caps,
                                 [([0] * n1, [0] * n2, [0] * n2, k, COS, 1.0)])
    sinq = TrigSeries.from_terms(dims, caps,
                                 [([0] * n1, [0] * n2, [0] * n2, k, SIN, 1.0)])
    for _ in range(ncos):
        out = mul(out, cosq, caps)
    for _ in range(nsin):
        out = mul(out, sinq, caps)
    return out


def _radial_series(j, h, Istar_j, dims, caps):
    """(2 I_j)^(h/2) with I_j = I*_j + p_j, binomially expanded in p_j."""
    n1, n2 = dims
    pref = (2.0 * Istar_j) ** (h / 2.0)
    tmax = caps[0] // 2
    terms = []
    coeff = 1.0
    for t in range(tmax + 1):
        if t > 0:
            coeff *= (h / 2.0 - t + 1) / t
            if coeff == 0.0:
                break
        m = [0] * n1
        m[j] = t
        terms.append((m, [0] * n2, [0] * n2, [0] * n1, COS,
                      pref * coeff / Istar_j ** t))
    return TrigSeries.from_terms(dims, caps, terms)


def assemble_H0(cfg, seed, caps, K=2):
    """Expand the chain Hamiltonian around the torus seed.

    Each source monomial of degree d in the mode variables is routed to
    the trig block s = max(d - 2, ceil(|k| / K)); the k = 0 terms of
    degree <= 2 are absorbed into the normal part (constants into the
    energy, p-linear terms into omega, transverse quadratics into Omega
    after a symplectic diagonalization recorded in pre_map).
    """
    n1 = seed.n1
    n2 = cfg.N - 1 - n1
    if not 1 <= n1 <= cfg.N - 1:
        raise ValueError("torus dimension out of range")
    dims = (n1, n2)
    Istar = np.asarray(seed.Istar, dtype=float)
    Hmodes = hamiltonian_in_modes(cfg)
    nu = mode_frequencies(cfg)

    per_source = {}          # source degree d -> accumulated series
    for _, lY, lbX, _, _, c in Hmodes.terms():
        d = sum(lY) + sum(lbX)
        acc = TrigSeries.constant(c, dims, caps)
        for j in range(n1):
            h = lY[j] + lbX[j]
            if h == 0:
                continue
            acc = mul(acc, _trig_power_series(j, lY[j], lbX[j], dims, caps),
                      caps)
            acc = mul(acc, _radial_series(j, h, Istar[j], dims, caps), caps)
        tail = []
        lt = [lY[j + n1] for j in range(n2)]
        lbt = [lbX[j + n1] for j in range(n2)]
        if any(lt) or any(lbt):
            mono = TrigSeries.from_terms(
                dims, caps, [([0] * n1, lt, lbt, [0] * n1, COS, 1.0)])
            acc = mul(acc, mono, caps)
        per_source[d] = add(per_source.get(d, TrigSeries.zero(dims, caps)),
                            acc)

    blocks = {}
    for d, series in sorted(per_source.items()):
        for (ell, s), blk in grade(series, K).items():
            key = (int(ell), int(max(s, d - 2)))
            blocks[key] = add(blocks.get(key, TrigSeries.zero(dims, caps)),
                              blk)

    # absorb k = 0, degree <= 2 content into the normal part
    energy = 0.0
    omega = np.zeros(n1)
    quad = TrigSeries.zero(dims, caps)
    for key in sorted(blocks):
        ell, s = key
        if ell > 2:
            continue
        blk = blocks[key]
        avg = average_over_angles(blk)
        if avg.is_zero():
            continue
        rest = blk - avg
        if ell == 0:
            energy += avg.coeffs[0]
        elif ell == 2:
            m, l, lb, _, _ = unpack_keys(avg.keys, n1, n2)
            for i in range(len(avg.keys)):
                if m[i].sum() == 1:
                    omega[int(np.argmax(m[i]))] += avg.coeffs[i]
                else:
                    quad = add(quad, TrigSeries(
                        dims, caps, avg.keys[i:i + 1], avg.coeffs[i:i + 1],
                        _sorted=True))
        else:
            # degree-1 k=0 terms stay in their block; the first-stage
            # transverse generating function removes them at step s
            rest = blk
        blocks[key] = rest

    # quad contains the harmonic transverse part plus k = 0 corrections
    pre_map = None
    if n2 > 0:
        S = quadratic_hessian(quad)
        M, Omega = symplectic_diagonalize(S)
        if np.abs(M - np.eye(2 * n2)).max() > 1e-14:
            pre_map = M
            blocks = {key: apply_linear_transverse(blk, M, caps)
                      for key, blk in blocks.items()}
    else:
        Omega = np.zeros(0)

    blocks = {key: blk for key, blk in blocks.items() if len(blk)}
    return GradedHamiltonian(dims, K, caps, omega, Omega, float(energy),
                             blocks, pre_map)
