"""Sparse algebra for real trigonometric-polynomial series.

A series is a finite sum of terms

    c * p^m * xi^l * eta^lb * cos(k.q)   or   ... * sin(k.q)

with n1 action/angle pairs (p, q) and n2 transverse pairs (xi, eta).
Exponents m, l, lb are non-negative integers, k is an integer harmonic
vector.  Each term key is packed into a single int64; a series stores a
sorted key array plus a coefficient array, which keeps products and
Poisson brackets fast under numba.

Canonical form: the first nonzero entry of k is positive (a sin term
flips sign when k is negated); sin with k = 0 is identically zero and
never stored; exact-zero coefficients are never stored.
"""

import numpy as np
from numba import njit, int64, float64
from numba.typed import Dict as NumbaDict

COS = 0
SIN = 1

_KBIAS = 64


class SeriesError(Exception):
    pass


class DimensionMismatch(SeriesError):
    pass


class NonTerminatingLieSeries(SeriesError):
    pass


def _shifts(n1, n2):
    # bit layout, low to high: parity | m (4b each) | l | lb | k (7b each)
    m0 = 1
    l0 = m0 + 4 * n1
    lb0 = l0 + 4 * n2
    k0 = lb0 + 4 * n2
    end = k0 + 7 * n1
    if end > 63:
        raise SeriesError(f"dims ({n1},{n2}) need {end} key bits > 63")
    return m0, l0, lb0, k0


def pack_key(m, l, lb, k, parity, n1, n2):
    m0, l0, lb0, k0 = _shifts(n1, n2)
    key = int(parity)
    for i in range(n1):
        if not 0 <= m[i] <= 15:
            raise SeriesError("m out of packable range")
        key |= int(m[i]) << (m0 + 4 * i)
    for j in range(n2):
        if not (0 <= l[j] <= 15 and 0 <= lb[j] <= 15):
            raise SeriesError("l/lb out of packable range")
        key |= int(l[j]) << (l0 + 4 * j)
        key |= int(lb[j]) << (lb0 + 4 * j)
    for i in range(n1):
        if not -_KBIAS <= k[i] < _KBIAS:
            raise SeriesError("k out of packable range")
        key |= (int(k[i]) + _KBIAS) << (k0 + 7 * i)
    return key


def unpack_keys(keys, n1, n2):
    """Vectorized unpack: returns (m, l, lb, k, parity) integer arrays."""
    keys = np.asarray(keys, dtype=np.int64)
    m0, l0, lb0, k0 = _shifts(n1, n2)
    empty = np.zeros(keys.shape + (0,), dtype=np.int64)
    parity = (keys & 1).astype(np.int64)
    m = np.stack([(keys >> (m0 + 4 * i)) & 15 for i in range(n1)], axis=-1) \
        if n1 else empty
    l = np.stack([(keys >> (l0 + 4 * j)) & 15 for j in range(n2)], axis=-1) \
        if n2 else empty
    lb = np.stack([(keys >> (lb0 + 4 * j)) & 15 for j in range(n2)], axis=-1) \
        if n2 else empty
    k = np.stack([((keys >> (k0 + 7 * i)) & 127) - _KBIAS for i in range(n1)],
                 axis=-1) if n1 else empty
    return m, l, lb, k, parity


def sqrt_degrees(keys, n1, n2):
    """2|m| + |l| + |lb| per key (total degree in sqrt-actions)."""
    m, l, lb, _, _ = unpack_keys(keys, n1, n2)
    return 2 * m.sum(axis=-1) + l.sum(axis=-1) + lb.sum(axis=-1)


def trig_degrees(keys, n1, n2):
    _, _, _, k, _ = unpack_keys(keys, n1, n2)
    return np.abs(k).sum(axis=-1)


class TrigSeries:
    """Immutable sparse trig-polynomial series."""

    __slots__ = ("n1", "n2", "caps", "keys", "coeffs")

    def __init__(self, dims, caps, keys, coeffs, _sorted=False):
        n1, n2 = dims
        lmax, kmax = caps
        if lmax > 15 or kmax >= _KBIAS:
            raise SeriesError("caps exceed packable field ranges")
        self.n1 = int(n1)
        self.n2 = int(n2)
        self.caps = (int(lmax), int(kmax))
        keys = np.asarray(keys, dtype=np.int64)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        nz = coeffs != 0.0
        if not nz.all():
            keys, coeffs = keys[nz], coeffs[nz]
        if not _sorted and len(keys) > 1:
            order = np.argsort(keys, kind="stable")
            keys, coeffs = keys[order], coeffs[order]
        self.keys = keys
        self.coeffs = coeffs
        self.keys.setflags(write=False)
        self.coeffs.setflags(write=False)

    # -- constructors ------------------------------------------------

    @classmethod
    def zero(cls, dims, caps):
        return cls(dims, caps, np.empty(0, np.int64), np.empty(0, np.float64),
                   _sorted=True)

    @classmethod
    def constant(cls, c, dims, caps):
        n1, n2 = dims
        if c == 0.0:
            return cls.zero(dims, caps)
        key = pack_key([0] * n1, [0] * n2, [0] * n2, [0] * n1, COS, n1, n2)
        return cls(dims, caps, [key], [float(c)])

    @classmethod
    def from_terms(cls, dims, caps, terms):
        """terms: iterable of (m, l, lb, k, parity, coeff)."""
        n1, n2 = dims
        acc = {}
        for m, l, lb, k, parity, c in terms:
            k = list(k)
            c = float(c)
            nz = next((v for v in k if v != 0), 0)
            if nz < 0:
                k = [-v for v in k]
                if parity == SIN:
                    c = -c
            if parity == SIN and all(v == 0 for v in k):
                continue
            if 2 * sum(m) + sum(l) + sum(lb) > caps[0] or \
                    sum(abs(v) for v in k) > caps[1]:
                raise SeriesError("term exceeds caps")
            key = pack_key(m, l, lb, k, parity, n1, n2)
            acc[key] = acc.get(key, 0.0) + c
        keys = np.fromiter(acc.keys(), np.int64, len(acc))
        vals = np.fromiter(acc.values(), np.float64, len(acc))
        return cls(dims, caps, keys, vals)

    # -- basics ------------------------------------------------------

    @property
    def dims(self):
        return (self.n1, self.n2)

    def __len__(self):
        return len(self.keys)

    def is_zero(self):
        return len(self.keys) == 0

    def terms(self):
        """Yield (m, l, lb, k, parity, coeff) tuples in canonical order."""
        if len(self.keys) == 0:
            return
        m, l, lb, k, parity = unpack_keys(self.keys, self.n1, self.n2)
        for i in range(len(self.keys)):
            yield (tuple(m[i]), tuple(l[i]), tuple(lb[i]), tuple(k[i]),
                   int(parity[i]), float(self.coeffs[i]))

    def with_caps(self, caps):
        """Re-cap; drops terms that no longer fit."""
        if caps == self.caps:
            return self
        deg = sqrt_degrees(self.keys, self.n1, self.n2)
        trig = trig_degrees(self.keys, self.n1, self.n2)
        keep = (deg <= caps[0]) & (trig <= caps[1])
        return TrigSeries(self.dims, caps, self.keys[keep],
                          self.coeffs[keep], _sorted=True)

    def __neg__(self):
        return TrigSeries(self.dims, self.caps, self.keys, -self.coeffs,
                          _sorted=True)

    def scale(self, c):
        if c == 0.0:
            return TrigSeries.zero(self.dims, self.caps)
        return TrigSeries(self.dims, self.caps, self.keys, c * self.coeffs,
                          _sorted=True)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -other)

    def __eq__(self, other):
        return (isinstance(other, TrigSeries) and self.dims == other.dims
                and np.array_equal(self.keys, other.keys)
                and np.array_equal(self.coeffs, other.coeffs))

    def __repr__(self):
        return (f"TrigSeries(dims={self.dims}, caps={self.caps}, "
                f"nterms={len(self)}, norm={l1_norm(self):.3e})")

    # -- serialization -----------------------------------------------

    def to_text(self):
        lines = [f"dims {self.n1} {self.n2}",
                 f"caps {self.caps[0]} {self.caps[1]}"]
        for m, l, lb, k, parity, c in self.terms():
            lines.append(" | ".join([
                " ".join(str(v) for v in m),
                " ".join(str(v) for v in l),
                " ".join(str(v) for v in lb),
                " ".join(str(v) for v in k),
                "sin" if parity == SIN else "cos",
                c.hex(),
            ]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 2 or not lines[0].startswith("dims"):
            raise SeriesError("bad series text header")
        n1, n2 = (int(v) for v in lines[0].split()[1:])
        lmax, kmax = (int(v) for v in lines[1].split()[1:])
        terms = []
        for ln in lines[2:]:
            fm, fl, flb, fk, fpar, fc = (part.strip()
                                         for part in ln.split("|"))
            m = [int(v) for v in fm.split()] if fm else []
            l = [int(v) for v in fl.split()] if fl else []
            lb = [int(v) for v in flb.split()] if flb else []
            k = [int(v) for v in fk.split()] if fk else []
            parity = SIN if fpar == "sin" else COS
            terms.append((m, l, lb, k, parity, float.fromhex(fc)))
        return cls.from_terms((n1, n2), (lmax, kmax), terms)


def _check_dims(a, b):
    if a.dims != b.dims:
        raise DimensionMismatch(f"{a.dims} vs {b.dims}")


def add(a, b):
    _check_dims(a, b)
    caps = (max(a.caps[0], b.caps[0]), max(a.caps[1], b.caps[1]))
    if a.is_zero():
        return b.with_caps(caps)
    if b.is_zero():
        return a.with_caps(caps)
    keys = np.concatenate([a.keys, b.keys])
    vals = np.concatenate([a.coeffs, b.coeffs])
    order = np.argsort(keys, kind="stable")
    keys, vals = keys[order], vals[order]
    uniq, start = np.unique(keys, return_index=True)
    sums = np.add.reduceat(vals, start)
    return TrigSeries(a.dims, caps, uniq, sums, _sorted=True)


def prune(f, eps=0.0):
    """Drop coefficients with |c| <= eps (exact zeros always dropped)."""
    keep = np.abs(f.coeffs) > eps
    if keep.all():
        return f
    return TrigSeries(f.dims, f.caps, f.keys[keep], f.coeffs[keep],
                      _sorted=True)


def l1_norm(f):
    return float(np.abs(f.coeffs).sum())


def average_over_angles(f):
    """Keep the k = 0, cos-parity part."""
    trig = trig_degrees(f.keys, f.n1, f.n2)
    keep = (trig == 0) & ((f.keys & 1) == COS)
    return TrigSeries(f.dims, f.caps, f.keys[keep], f.coeffs[keep],
                      _sorted=True)


def oscillating_part(f):
    """Complement of average_over_angles."""
    trig = trig_degrees(f.keys, f.n1, f.n2)
    keep = trig > 0
    return TrigSeries(f.dims, f.caps, f.keys[keep], f.coeffs[keep],
                      _sorted=True)


# -- grading ---------------------------------------------------------

def class_index(key_or_deg_trig, K):
    deg, trig = key_or_deg_trig
    s = 0 if trig == 0 else -(-trig // K)
    return (int(deg), int(s))


def grade(f, K):
    """Partition into blocks keyed by (sqrt-action degree, trig block s).

    s = 0 for k = 0 terms, otherwise s = ceil(|k| / K).
    """
    if K < 1:
        raise SeriesError("block width K must be >= 1")
    out = {}
    if f.is_zero():
        return out
    deg = sqrt_degrees(f.keys, f.n1, f.n2)
    trig = trig_degrees(f.keys, f.n1, f.n2)
    s = np.where(trig == 0, 0, -(-trig // K))
    for d in np.unique(deg):
        dm = deg == d
        for sv in np.unique(s[dm]):
            sel = dm & (s == sv)
            out[(int(d), int(sv))] = TrigSeries(
                f.dims, f.caps, f.keys[sel], f.coeffs[sel], _sorted=True)
    return out


# -- derivatives -----------------------------------------------------

def diff_p(f, j):
    m0, _, _, _ = _shifts(f.n1, f.n2)
    sh = m0 + 4 * j
    mj = (f.keys >> sh) & 15
    keep = mj > 0
    keys = f.keys[keep] - (np.int64(1) << sh)
    vals = f.coeffs[keep] * mj[keep]
    return TrigSeries(f.dims, f.caps, keys, vals, _sorted=True)


def diff_xi(f, j):
    _, l0, _, _ = _shifts(f.n1, f.n2)
    sh = l0 + 4 * j
    lj = (f.keys >> sh) & 15
    keep = lj > 0
    keys = f.keys[keep] - (np.int64(1) << sh)
    vals = f.coeffs[keep] * lj[keep]
    return TrigSeries(f.dims, f.caps, keys, vals, _sorted=True)


def diff_eta(f, j):
    _, _, lb0, _ = _shifts(f.n1, f.n2)
    sh = lb0 + 4 * j
    lbj = (f.keys >> sh) & 15
    keep = lbj > 0
    keys = f.keys[keep] - (np.int64(1) << sh)
    vals = f.coeffs[keep] * lbj[keep]
    return TrigSeries(f.dims, f.caps, keys, vals, _sorted=True)


def diff_q(f, j):
    # d/dq of cos(k.q) is -k_j sin(k.q); of sin(k.q) is k_j cos(k.q)
    _, _, _, k0 = _shifts(f.n1, f.n2)
    kj = ((f.keys >> (k0 + 7 * j)) & 127) - _KBIAS
    keep = kj != 0
    keys = f.keys[keep] ^ np.int64(1)
    par = f.keys[keep] & 1
    vals = np.where(par == COS, -1.0, 1.0) * kj[keep] * f.coeffs[keep]
    return TrigSeries(f.dims, f.caps, keys, vals)


# -- product and bracket kernels ------------------------------------

@njit(cache=True)
def _mul_kernel(keys_a, vals_a, deg_a, keys_b, vals_b, deg_b,
                n1, n2, lmax, kmax, sign):
    m0 = 1
    k0 = 1 + 4 * n1 + 8 * n2
    mllb_mask = ((int64(1) << k0) - 1) & ~int64(1)
    out = NumbaDict.empty(int64, float64)
    ka = np.empty(n1, int64)
    kb = np.empty(n1, int64)
    kr = np.empty(n1, int64)
    for ia in range(len(keys_a)):
        a = keys_a[ia]
        ca = vals_a[ia]
        da = deg_a[ia]
        pa = a & 1
        for i in range(n1):
            ka[i] = ((a >> (k0 + 7 * i)) & 127) - 64
        for ib in range(len(keys_b)):
            if da + deg_b[ib] > lmax:
                continue
            b = keys_b[ib]
            cb = vals_b[ib]
            pb = b & 1
            base = (a & mllb_mask) + (b & mllb_mask)
            for i in range(n1):
                kb[i] = ((b >> (k0 + 7 * i)) & 127) - 64
            # two output harmonics: k_a - k_b and k_a + k_b
            for half in range(2):
                if half == 0:
                    for i in range(n1):
                        kr[i] = ka[i] - kb[i]
                    if pa == 0 and pb == 0:
                        pr, c = 0, 0.5 * ca * cb      # cos cos -> +cos(-)
                    elif pa == 1 and pb == 1:
                        pr, c = 0, 0.5 * ca * cb      # sin sin -> +cos(-)
                    elif pa == 1 and pb == 0:
                        pr, c = 1, 0.5 * ca * cb      # sin cos -> +sin(-)
                    else:
                        pr, c = 1, -0.5 * ca * cb     # cos sin -> -sin(-)
                else:
                    for i in range(n1):
                        kr[i] = ka[i] + kb[i]
                    if pa == 0 and pb == 0:
                        pr, c = 0, 0.5 * ca * cb      # cos cos -> +cos(+)
                    elif pa == 1 and pb == 1:
                        pr, c = 0, -0.5 * ca * cb     # sin sin -> -cos(+)
                    else:
                        pr, c = 1, 0.5 * ca * cb      # mixed -> +sin(+)
                ksum = 0
                first = 0
                for i in range(n1):
                    ksum += abs(kr[i])
                    if first == 0 and kr[i] != 0:
                        first = 1 if kr[i] > 0 else -1
                if ksum > kmax:
                    continue
                if first == 0 and pr == 1:
                    continue                          # sin(0) drops
                if first < 0:
                    for i in range(n1):
                        kr[i] = -kr[i]
                    if pr == 1:
                        c = -c
                key = base | pr
                for i in range(n1):
                    key |= (kr[i] + 64) << (k0 + 7 * i)
                c *= sign
                if key in out:
                    out[key] += c
                else:
                    out[key] = c
    nk = len(out)
    rk = np.empty(nk, int64)
    rv = np.empty(nk, float64)
    i = 0
    for key, val in out.items():
        rk[i] = key
        rv[i] = val
        i += 1
    return rk, rv


@njit(cache=True)
def _mul_into(out, keys_a, vals_a, deg_a, keys_b, vals_b, deg_b,
              n1, n2, lmax, kmax, sign):
    rk, rv = _mul_kernel(keys_a, vals_a, deg_a, keys_b, vals_b, deg_b,
                         n1, n2, lmax, kmax, sign)
    for i in range(len(rk)):
        key = rk[i]
        if key in out:
            out[key] += rv[i]
        else:
            out[key] = rv[i]


def _dict_to_series(out, dims, caps):
    nk = len(out)
    keys = np.fromiter(out.keys(), np.int64, nk)
    vals = np.fromiter(out.values(), np.float64, nk)
    return TrigSeries(dims, caps, keys, vals)


def mul(a, b, caps=None):
    _check_dims(a, b)
    if caps is None:
        caps = (max(a.caps[0], b.caps[0]), max(a.caps[1], b.caps[1]))
    if a.is_zero() or b.is_zero():
        return TrigSeries.zero(a.dims, caps)
    deg_a = sqrt_degrees(a.keys, a.n1, a.n2)
    deg_b = sqrt_degrees(b.keys, b.n1, b.n2)
    keys, vals = _mul_kernel(a.keys, a.coeffs, deg_a, b.keys, b.coeffs,
                             deg_b, a.n1, a.n2, caps[0], caps[1], 1.0)
    return TrigSeries(a.dims, caps, keys, vals)


def poisson(f, g, caps=None):
    """{f, g} with (q, p) and (eta, xi) as (coordinate, momentum) pairs:

    {f,g} = sum_j (f_q g_p - f_p g_q) + sum_j (f_eta g_xi - f_xi g_eta)
    """
    _check_dims(f, g)
    if caps is None:
        caps = (max(f.caps[0], g.caps[0]), max(f.caps[1], g.caps[1]))
    if f.is_zero() or g.is_zero():
        return TrigSeries.zero(f.dims, caps)
    out = NumbaDict.empty(int64, float64)
    n1, n2 = f.dims

    def _acc(u, v, sign):
        if u.is_zero() or v.is_zero():
            return
        du = sqrt_degrees(u.keys, n1, n2)
        dv = sqrt_degrees(v.keys, n1, n2)
        _mul_into(out, u.keys, u.coeffs, du, v.keys, v.coeffs, dv,
                  n1, n2, caps[0], caps[1], sign)

    for j in range(n1):
        _acc(diff_q(f, j), diff_p(g, j), 1.0)
        _acc(diff_p(f, j), diff_q(g, j), -1.0)
    for j in range(n2):
        _acc(diff_eta(f, j), diff_xi(g, j), 1.0)
        _acc(diff_xi(f, j), diff_eta(g, j), -1.0)
    return _dict_to_series(out, f.dims, caps)


def lie_series(f, chi, caps=None, max_iters=None):
    """exp(L_chi) f = sum_i (1/i!) L_chi^i f, truncated to caps.

    The loop stops when a contribution vanishes identically after
    truncation; raises if it fails to terminate within max_iters.
    """
    _check_dims(f, chi)
    if caps is None:
        caps = (max(f.caps[0], chi.caps[0]), max(f.caps[1], chi.caps[1]))
    if max_iters is None:
        max_iters = 4 * (caps[0] + caps[1]) + 8
    total = f.with_caps(caps)
    term = total
    for i in range(1, max_iters + 1):
        term = poisson(term, chi, caps).scale(1.0 / i)
        if term.is_zero():
            return total
        total = add(total, term)
    raise NonTerminatingLieSeries(
        f"no termination after {max_iters} brackets (caps={caps})")


# -- evaluation ------------------------------------------------------

def evaluate(f, p, q, xi, eta):
    """Numeric value of the series at a point (or batch of points).

    p, q have length n1; xi, eta length n2.  Batched input: arrays of
    shape (npts, n).
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    xi = np.atleast_2d(np.asarray(xi, dtype=np.float64))
    eta = np.atleast_2d(np.asarray(eta, dtype=np.float64))
    batch = p.shape[0]
    if p.shape[1] != f.n1 or q.shape[1] != f.n1 or \
            xi.shape[1] != f.n2 or eta.shape[1] != f.n2:
        raise DimensionMismatch("point dims do not match series dims")
    if f.is_zero():
        res = np.zeros(batch)
        return float(res[0]) if batch == 1 else res
    m, l, lb, k, parity = unpack_keys(f.keys, f.n1, f.n2)
    # (batch, nterms)
    mono = np.ones((batch, len(f.keys)))
    for i in range(f.n1):
        mono *= p[:, i:i + 1] ** m[:, i]
    for j in range(f.n2):
        mono *= xi[:, j:j + 1] ** l[:, j]
        mono *= eta[:, j:j + 1] ** lb[:, j]
    phase = q @ k.T.astype(np.float64)
    trig = np.where(parity == COS, np.cos(phase), np.sin(phase))
    res = (mono * trig) @ f.coeffs
    return float(res[0]) if batch == 1 else res


def gradient_series(f):
    """Partial-derivative series (df/dp, df/dq, df/dxi, df/deta)."""
    return ([diff_p(f, j) for j in range(f.n1)],
            [diff_q(f, j) for j in range(f.n1)],
            [diff_xi(f, j) for j in range(f.n2)],
            [diff_eta(f, j) for j in range(f.n2)])


def hamiltonian_rhs(chi):
    """Right-hand side z' = {z, chi} as a callable on (p,q,xi,eta).

    Under the bracket convention above:
        dp/dt  = -dchi/dq,   dq/dt  = +dchi/dp,
        dxi/dt = -dchi/deta, deta/dt = +dchi/dxi.
    """
    dp, dq, dxi, deta = gradient_series(chi)

    def rhs(p, q, xi, eta):
        pdot = np.array([-evaluate(g, p, q, xi, eta) for g in dq])
        qdot = np.array([evaluate(g, p, q, xi, eta) for g in dp])
        xidot = np.array([-evaluate(g, p, q, xi, eta) for g in deta])
        etadot = np.array([evaluate(g, p, q, xi, eta) for g in dxi])
        return pdot, qdot, xidot, etadot

    return rhs
