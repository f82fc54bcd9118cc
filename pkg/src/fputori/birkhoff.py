"""Finite-order Birkhoff normal form around a constructed torus.

Starting from the output of a converged torus normalization, the
Hamiltonian (normal part plus the perturbation blocks of transverse
degree > 2) is reduced order by order: step r removes the angle
dependence at total degree r + 2 through a generating function chi
solved in the complex variables z_j = xi_j + i eta_j, where the
homological operator {., omega p + Sum Omega (xi^2+eta^2)/2} is
diagonal with eigenvalues i (k.omega + (a - b).Omega).  The kernel
(k = 0, a = b) is the angle-free part Z_r.
"""

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .series import (TrigSeries, SeriesError, COS, SIN, add, prune,
                     l1_norm, lie_series, unpack_keys, sqrt_degrees,
                     evaluate)
from .normalizer import SmallDivisor, flow_points, map_from_original
from .fpu import semi_sinusoidal_ic, modes_forward, total_energy, \
    mode_frequencies


@dataclass
class BirkhoffForm:
    dims: tuple
    caps: tuple
    order: int
    omega: np.ndarray
    Omega: np.ndarray
    Z: list                  # Z[s] angle-free, degree s + 2 (Z[0] = nu.I)
    remainder: TrigSeries    # degrees > order + 2
    chis: list = field(default_factory=list)


def _degree_part(f, degree):
    if f.is_zero():
        return f
    deg = sqrt_degrees(f.keys, *f.dims)
    sel = deg == degree
    return TrigSeries(f.dims, f.caps, f.keys[sel], f.coeffs[sel],
                      _sorted=True)


def _to_complex(f):
    """Real series -> {(m, a, b, k): complex coeff} with z = xi+i eta,
    monomials p^m z^a zbar^b e^{i k.q}."""
    n1, n2 = f.dims
    out = {}
    m, l, lb, k, parity = unpack_keys(f.keys, n1, n2)
    from math import comb
    for i in range(len(f.keys)):
        c = complex(f.coeffs[i])
        base = {((), ()): c}
        # xi^l eta^lb -> products over modes of ((z+zb)/2)^l ((z-zb)/2i)^lb
        factors = {}
        for j in range(n2):
            tot = {}
            for u in range(l[i][j] + 1):
                for v in range(lb[i][j] + 1):
                    a = u + v
                    b = l[i][j] - u + lb[i][j] - v
                    w = comb(l[i][j], u) * comb(lb[i][j], v) \
                        * (0.5 ** l[i][j]) \
                        * ((-1j * 0.5) ** lb[i][j]) * ((-1.0) ** (lb[i][j] - v))
                    tot[(a, b)] = tot.get((a, b), 0.0) + w
            factors[j] = tot
        # trig factor
        kk = tuple(int(v) for v in k[i])
        if all(v == 0 for v in kk):
            trig = {kk: 1.0 + 0.0j}
        elif parity[i] == COS:
            trig = {kk: 0.5, tuple(-v for v in kk): 0.5}
        else:
            trig = {kk: -0.5j, tuple(-v for v in kk): 0.5j}
        combos = [((), 1.0 + 0.0j)]
        for j in range(n2):
            combos = [(ab + (key,), wgt * w)
                      for ab, wgt in combos
                      for key, w in factors[j].items()]
        mm = tuple(int(v) for v in m[i])
        for ab, wgt in combos:
            a = tuple(x[0] for x in ab)
            b = tuple(x[1] for x in ab)
            for kv, tw in trig.items():
                key = (mm, a, b, kv)
                out[key] = out.get(key, 0.0) + c * wgt * tw
    return out


def _to_real(cdict, dims, caps, tol=1e-13):
    """Inverse of _to_complex; input must be conjugation-symmetric."""
    n1, n2 = dims
    from math import comb
    terms = {}
    for (mm, a, b, kv), c in cdict.items():
        if abs(c) == 0.0:
            continue
        # z^a zbar^b = prod (xi + i eta)^a (xi - i eta)^b
        combos = [((), c)]
        for j in range(n2):
            tot = {}
            for u in range(a[j] + 1):
                for v in range(b[j] + 1):
                    ll = u + v
                    bb = a[j] - u + b[j] - v
                    w = comb(a[j], u) * comb(b[j], v) \
                        * (1j ** (a[j] - u)) * ((-1j) ** (b[j] - v))
                    tot[(ll, bb)] = tot.get((ll, bb), 0.0) + w
            combos = [(lb_ + (key,), wgt * w)
                      for lb_, wgt in combos
                      for key, w in tot.items()]
        for lb_, wgt in combos:
            l = tuple(x[0] for x in lb_)
            lb = tuple(x[1] for x in lb_)
            # e^{i k q} = cos + i sin, with the trig key canonicalized
            # (first nonzero k > 0) so conjugate pairs land together
            first = next((v for v in kv if v != 0), 0)
            for par, pw in ((COS, 1.0), (SIN, 1j)):
                kk, w = kv, wgt * pw
                if first == 0 and par == SIN:
                    continue
                if first < 0:
                    kk = tuple(-v for v in kv)
                    if par == SIN:
                        w = -w
                key = (mm, l, lb, kk, par)
                terms[key] = terms.get(key, 0.0) + w
    out_terms = []
    scale = max((abs(v) for v in terms.values()), default=1.0)
    for (mm, l, lb, kv, par), c in terms.items():
        if abs(c.imag) > tol * max(scale, 1.0):
            raise SeriesError(f"complex residue {c.imag:.2e} in "
                              "real back-conversion")
        if c.real != 0.0:
            out_terms.append((list(mm), list(l), list(lb), list(kv),
                              par, c.real))
    return TrigSeries.from_terms(dims, caps, out_terms)


def birkhoff_step(H, omega, Omega, r, divisor_floor=1e-8):
    """One Birkhoff step: returns (H_new, Z_r, chi_r, min_divisor)."""
    f_r = _degree_part(H, r + 2)
    if f_r.is_zero():
        return H, f_r, f_r, math.inf
    cdict = _to_complex(f_r)
    chi_c = {}
    z_c = {}
    min_div = math.inf
    for (mm, a, b, kv), c in cdict.items():
        lam = float(np.dot(kv, omega) + (np.array(a) - np.array(b))
                    @ Omega)
        if all(v == 0 for v in kv) and a == b:
            z_c[(mm, a, b, kv)] = c
            continue
        if abs(lam) <= divisor_floor:
            raise SmallDivisor(f"k={kv}, a-b={tuple(np.array(a)-np.array(b))}",
                               abs(lam))
        min_div = min(min_div, abs(lam))
        # {chi, nu.I} acts as multiplication by i lam; solve
        # i lam chi + f = 0 termwise
        chi_c[(mm, a, b, kv)] = -c / (1j * lam)
    chi = _to_real(chi_c, H.dims, H.caps)
    Z_r = _to_real(z_c, H.dims, H.caps)
    H_new = lie_series(H, -chi, H.caps)
    H_new = prune(H_new, 1e-16 * l1_norm(H_new))
    return H_new, Z_r, chi, min_div


def run_birkhoff(H_graded, order, divisor_floor=1e-8):
    """Birkhoff normal form of a normalized torus Hamiltonian.

    Blocks of transverse degree <= 2 left over beyond the last
    normalization step are dropped (they are beyond the working
    formal order); only ell > 2 blocks feed the form.
    """
    dims, caps = H_graded.dims, H_graded.caps
    H = H_graded.normal_part()
    H = add(H, TrigSeries.constant(-H_graded.energy, dims, caps))
    for (ell, s), blk in sorted(H_graded.blocks.items()):
        if ell > 2:
            H = add(H, blk)
    Z0 = H_graded.normal_part()
    Z0 = add(Z0, TrigSeries.constant(-H_graded.energy, dims, caps))
    form = BirkhoffForm(dims, caps, order, H_graded.omega.copy(),
                        H_graded.Omega.copy(), [Z0],
                        TrigSeries.zero(dims, caps))
    for r in range(1, order + 1):
        H, Z_r, chi, _ = birkhoff_step(H, form.omega, form.Omega, r,
                                       divisor_floor)
        form.Z.append(Z_r)
        form.chis.append(chi)
    if not H.is_zero():
        deg = sqrt_degrees(H.keys, *dims)
        sel = deg > order + 2
        form.remainder = TrigSeries(dims, caps, H.keys[sel],
                                    H.coeffs[sel], _sorted=True)
    return form


def remainder_value_at(form, point):
    """|remainder| at a phase-space point (p, q, xi, eta)."""
    n1, n2 = form.dims
    z = np.asarray(point, dtype=float)
    return abs(evaluate(form.remainder, z[None, :n1], z[None, n1:2 * n1],
                        z[None, 2 * n1:2 * n1 + n2],
                        z[None, 2 * n1 + n2:]))


def to_birkhoff_coords(form, pts):
    """Normal-form coordinates -> Birkhoff coordinates (time-1 flows
    of each generating function, in step order)."""
    for chi in form.chis:
        if not chi.is_zero():
            pts = flow_points(chi, pts, time=1.0)
    return pts


def monodromy_angles(omega1, Omega):
    """Eigenvalue angles of the period map of a 1D torus."""
    if omega1 == 0.0:
        raise ValueError("omega1 must be nonzero")
    theta = []
    for Om in np.atleast_1d(Omega):
        th = math.remainder(2.0 * math.pi * Om / omega1,
                            2.0 * math.pi)
        if th <= -math.pi:
            th += 2.0 * math.pi
        theta.append(th)
    theta.append(0.0)                     # unit pair lambda_{+-} = 1
    eigvals = [np.exp(1j * th) for th in theta]
    return np.array(theta), np.array(eigvals)


def energy_matched_amplitude(cfg_chain, energy):
    """Semi-sinusoidal amplitude whose harmonic energy matches."""
    nu1 = mode_frequencies(cfg_chain)[0]
    return math.sqrt(2.0 * max(energy, 0.0) / nu1)


def scan_semi_sinusoidal(form, stack, cfg_chain, torus_energy,
                         amplitudes=None):
    """Minimum |remainder| over semi-sinusoidal initial conditions.

    Returns (E_S_min, min_R, rows) where rows lists
    (amplitude, E_S, |R|) for every scanned amplitude that maps inside
    the validity region.
    """
    if amplitudes is None:
        A0 = energy_matched_amplitude(cfg_chain, torus_energy)
        amplitudes = np.linspace(0.5 * A0, 1.5 * A0, 21)
    rows = []
    for A in amplitudes:
        y0, x0 = semi_sinusoidal_ic(cfg_chain, float(A))
        Y0, X0 = modes_forward(cfg_chain, y0, x0)
        E_S = total_energy(cfg_chain, y0, x0) / cfg_chain.N
        try:
            z = map_from_original(stack, Y0, X0)
        except SeriesError:
            continue
        z = to_birkhoff_coords(form, z[None, :])[0]
        rows.append((float(A), E_S, float(remainder_value_at(form, z))))
    if not rows:
        raise SeriesError("no semi-sinusoidal point maps into the "
                          "validity region")
    best = min(rows, key=lambda row: row[2])
    return best[1], best[2], rows
