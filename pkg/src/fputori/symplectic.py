"""Symplectic diagonalization of transverse quadratic forms.

Coordinates are ordered z = (xi_1..xi_n, eta_1..eta_n) with bracket
{f,g} = sum_j (f_eta g_xi - f_xi g_eta), i.e. Poisson matrix
J = [[0, -I], [I, 0]].  A quadratic Hamiltonian Q(z) = z.S.z/2 with
elliptic spectrum is brought to sum_j Omega_j (xi_j^2 + eta_j^2)/2 by
a linear symplectic map z = M z'.
"""

import numpy as np

from .series import (TrigSeries, SeriesError, add, mul, unpack_keys,
                     pack_key, COS)


class EllipticityLost(SeriesError):
    pass


class DegenerateFrequencies(SeriesError):
    pass


def poisson_matrix(n):
    J = np.zeros((2 * n, 2 * n))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    return J


def quadratic_hessian(q_series):
    """Hessian S of a k = 0 quadratic series in (xi, eta), Q = z.S.z/2."""
    n2 = q_series.n2
    S = np.zeros((2 * n2, 2 * n2))
    for m, l, lb, k, parity, c in q_series.terms():
        if any(m) or any(v != 0 for v in k) or parity != COS:
            raise SeriesError("input must be a k = 0 quadratic in (xi, eta)")
        idx = [j for j in range(n2) for _ in range(l[j])] + \
              [n2 + j for j in range(n2) for _ in range(lb[j])]
        if len(idx) != 2:
            raise SeriesError("input must be quadratic in (xi, eta)")
        a, b = idx
        if a == b:
            S[a, a] += 2 * c
        else:
            S[a, b] += c
            S[b, a] += c
    return S


def symplectic_diagonalize(S, divisor_floor=1e-8, tol=1e-10):
    """Return (M, Omega) with M symplectic and M^T S M = diag(Omega)x2.

    The flow matrix A = J S must have purely imaginary, pairwise
    distinct eigenvalue pairs; otherwise EllipticityLost or
    DegenerateFrequencies is raised.
    """
    from scipy.optimize import linear_sum_assignment

    n = S.shape[0] // 2
    J = poisson_matrix(n)
    A = J @ S
    scale = max(np.abs(A).max(), 1.0)
    evals, evecs = np.linalg.eig(A)
    if np.abs(evals.real).max() > tol * scale:
        raise EllipticityLost(f"non-imaginary eigenvalue: {evals}")
    pos = [i for i in range(2 * n) if evals.imag[i] > 0]
    if len(pos) != n:
        raise EllipticityLost("could not pair eigenvalues")
    freqs = evals.imag[pos]
    for i in range(n):
        for j in range(i + 1, n):
            if abs(freqs[i] - freqs[j]) <= divisor_floor:
                raise DegenerateFrequencies(
                    f"|Omega_{i}-Omega_{j}| = {abs(freqs[i]-freqs[j]):.3e}")
    # assign each eigenplane to the coordinate plane it overlaps most
    # (component moduli are invariant under the phase choice below)
    overlap = np.zeros((n, n))
    for row, i in enumerate(pos):
        v = evecs[:, i]
        for j in range(n):
            overlap[row, j] = abs(v[j]) ** 2 + abs(v[n + j]) ** 2
    rows, planes = linear_sum_assignment(-overlap)
    plane_of = dict(zip(rows, planes))
    cols_xi = np.zeros((2 * n, n))
    cols_eta = np.zeros((2 * n, n))
    Omega = np.zeros(n)
    for row, i in enumerate(pos):
        idx = int(plane_of[row])
        w_abs = freqs[row]
        v = evecs[:, i]
        u, w = v.real, v.imag
        # columns (a, b) for (xi', eta') satisfy A a = W b, A b = -W a
        a, b = w, u
        # rotate the eigenplane so M stays close to the identity
        e = np.zeros(2 * n, dtype=complex)
        e[n + idx] = 1.0      # eta direction
        e[idx] = 1.0j         # xi direction
        zeta = b + 1j * a
        c = np.vdot(e, zeta)
        if abs(c) > 0:
            phase = c / abs(c)
            zeta = zeta / phase
            b, a = zeta.real, zeta.imag
        s = a @ J @ b
        if abs(s) <= tol:
            raise EllipticityLost("degenerate symplectic pairing")
        if s < 0:
            rho = 1.0 / np.sqrt(-s)
            Omega[idx] = w_abs
        else:
            rho = 1.0 / np.sqrt(s)
            a = -a
            Omega[idx] = -w_abs
        cols_xi[:, idx] = rho * a
        cols_eta[:, idx] = rho * b
    M = np.concatenate([cols_xi, cols_eta], axis=1)
    res = M.T @ J @ M - J
    if np.abs(res).max() > 1e-10:
        raise EllipticityLost(f"symplectic defect {np.abs(res).max():.2e}")
    D = M.T @ S @ M
    target = np.diag(np.concatenate([Omega, Omega]))
    if np.abs(D - target).max() > 1e-9 * scale:
        raise EllipticityLost("diagonalization residue too large")
    return M, Omega


def _linear_form(row, dims, caps):
    n1, n2 = dims
    terms = []
    for j in range(n2):
        if row[j] != 0.0:
            l = [0] * n2
            l[j] = 1
            terms.append(([0] * n1, l, [0] * n2, [0] * n1, COS, row[j]))
        if row[n2 + j] != 0.0:
            lb = [0] * n2
            lb[j] = 1
            terms.append(([0] * n1, [0] * n2, lb, [0] * n1, COS, row[n2 + j]))
    return TrigSeries.from_terms(dims, caps, terms)


def apply_linear_transverse(f, M, caps=None):
    """Substitute (xi, eta) = M (xi', eta') into the series f."""
    if caps is None:
        caps = f.caps
    if f.is_zero():
        return f.with_caps(caps)
    n1, n2 = f.dims
    forms = [_linear_form(M[i], f.dims, caps) for i in range(2 * n2)]
    m, l, lb, k, parity = unpack_keys(f.keys, n1, n2)
    cache = {}
    out = TrigSeries.zero(f.dims, caps)
    groups = {}
    for i in range(len(f.keys)):
        pat = (tuple(l[i]), tuple(lb[i]))
        groups.setdefault(pat, []).append(i)
    for pat, idxs in groups.items():
        lpat, lbpat = pat
        if pat not in cache:
            poly = TrigSeries.constant(1.0, f.dims, caps)
            for j in range(n2):
                for _ in range(lpat[j]):
                    poly = mul(poly, forms[j], caps)
                for _ in range(lbpat[j]):
                    poly = mul(poly, forms[n2 + j], caps)
            cache[pat] = poly
        base_terms = []
        for i in idxs:
            base_terms.append((list(m[i]), [0] * n2, [0] * n2, list(k[i]),
                               int(parity[i]), float(f.coeffs[i])))
        base = TrigSeries.from_terms(f.dims, caps, base_terms)
        out = add(out, mul(base, cache[pat], caps))
    return out
