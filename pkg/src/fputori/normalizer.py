"""Iterative normal-form construction of elliptic tori.

Each step r removes, up to trigonometric degree rK, the perturbation
blocks of degree 0 (angle-only, generator chi0), degree 1 in the
transverse variables (chi1), and degree 2 (p-linear part via X2,
transverse-quadratic part via Y2), then diagonalizes the angle-averaged
transverse quadratic with a linear symplectic map.  Frequencies omega,
Omega and the energy constant are updated with the angle averages.

Generators act on the Hamiltonian through exp({chi, .}) with block
routing (ell, s) -> (ell + i (ell_chi - 2), s + i r), truncated at
s > smax; the corresponding point map applies the time-(-1) flows of
the generators (and the linear map) in the order chi0, chi1, X2, Y2,
D per step, outermost step first.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .series import (TrigSeries, SeriesError, COS, SIN, add, mul, poisson,
                     prune, l1_norm, average_over_angles, oscillating_part,
                     unpack_keys, pack_key, sqrt_degrees, trig_degrees,
                     gradient_series, evaluate)
from .symplectic import (quadratic_hessian, symplectic_diagonalize,
                         apply_linear_transverse, EllipticityLost,
                         DegenerateFrequencies)
from .fpu import GradedHamiltonian


class SmallDivisor(SeriesError):
    def __init__(self, label, value):
        self.label = label
        self.value = value
        super().__init__(f"small divisor {label}: {value:.3e}")


@dataclass
class NormalizerConfig:
    rbar: int
    K: int = 2
    caps: tuple = None
    divisor_floor: float = 1e-8
    ruleA_base: float = 0.95
    ruleB_ratio: float = 1e-3
    prune_rel: float = 1e-16

    def __post_init__(self):
        if self.rbar < 1 or self.divisor_floor <= 0:
            raise ValueError("need rbar >= 1 and divisor_floor > 0")


@dataclass
class StepReport:
    r: int
    norms: dict
    omega: np.ndarray
    Omega: np.ndarray
    energy: float
    min_divisor: float
    residuals: dict


@dataclass
class StepMaps:
    step: int
    chi0: TrigSeries = None
    chi1: TrigSeries = None
    x2: TrigSeries = None
    y2: TrigSeries = None
    linear: np.ndarray = None


@dataclass
class TransformStack:
    dims: tuple
    Istar: tuple
    entries: list = field(default_factory=list)

    def to_text(self):
        lines = [f"dims {self.dims[0]} {self.dims[1]}",
                 "Istar " + " ".join(v.hex() for v in map(float, self.Istar))]
        for e in self.entries:
            lines.append(f"step {e.step}")
            for name in ("chi0", "chi1", "x2", "y2"):
                s = getattr(e, name)
                if s is not None and len(s):
                    lines.append(f"begin {name}")
                    lines.append(s.to_text().rstrip("\n"))
                    lines.append("end")
            if e.linear is not None:
                lines.append("begin linear")
                for row in e.linear:
                    lines.append(" ".join(float(v).hex() for v in row))
                lines.append("end")
            lines.append("endstep")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        dims = tuple(int(v) for v in lines[0].split()[1:])
        Istar = tuple(float.fromhex(v) for v in lines[1].split()[1:])
        stack = cls(dims, Istar)
        i = 2
        entry = None
        while i < len(lines):
            ln = lines[i]
            if ln.startswith("step"):
                entry = StepMaps(int(ln.split()[1]))
            elif ln == "endstep":
                stack.entries.append(entry)
            elif ln.startswith("begin"):
                name = ln.split()[1]
                j = i + 1
                body = []
                while lines[j] != "end":
                    body.append(lines[j])
                    j += 1
                if name == "linear":
                    entry.linear = np.array(
                        [[float.fromhex(v) for v in row.split()]
                         for row in body])
                else:
                    setattr(entry, name,
                            TrigSeries.from_text("\n".join(body)))
                i = j
            i += 1
        return stack


@dataclass
class RunResult:
    H: GradedHamiltonian
    reports: list
    stack: TransformStack
    converged: bool
    reason: str
    intermediates: list = None


def _normal_quadratic(H):
    n1, n2 = H.dims
    terms = []
    for j in range(n1):
        m = [0] * n1
        m[j] = 1
        terms.append((m, [0] * n2, [0] * n2, [0] * n1, COS, H.omega[j]))
    for j in range(n2):
        for which in range(2):
            l = [0] * n2
            l[j] = 2
            args = ([0] * n1, l, [0] * n2) if which == 0 else \
                   ([0] * n1, [0] * n2, l)
            terms.append((*args, [0] * n1, COS, H.Omega[j] / 2.0))
    return TrigSeries.from_terms(H.dims, H.caps, terms)


def apply_generator(H, chi, ell_chi, r, smax, prune_rel=1e-16):
    """In-place exp({chi, .}) on all blocks and the normal part.

    Bracket contributions routed past class smax are kept in a single
    tail class smax + 1: they are never normalized (steps stop at
    smax), but they carry real Hamiltonian content that the exchange
    identity sees.  The series for a fixed source is cut once its
    running norm falls below 1e-16 of the source norm.
    """
    if chi.is_zero():
        return
    caps = H.caps
    sources = [(key, blk) for key, blk in sorted(H.blocks.items())]
    sources.append(((2, 0), _normal_quadratic(H)))
    new_blocks = dict(H.blocks)
    for (ell, s), f in sources:
        fnorm = l1_norm(f)
        g = f
        i = 0
        while True:
            i += 1
            tell = ell + i * (ell_chi - 2)
            if tell < 0 or i > 400:
                break
            g = poisson(chi, g, caps).scale(1.0 / i)
            g = prune(g, prune_rel * l1_norm(g))
            if g.is_zero() or l1_norm(g) < 1e-16 * fnorm:
                break
            key = (tell, min(s + i * r, smax + 1))
            new_blocks[key] = add(new_blocks.get(
                key, TrigSeries.zero(H.dims, caps)), g)
    H.blocks = {key: blk for key, blk in new_blocks.items() if len(blk)}


# -- stage solvers -----------------------------------------------------

def _kdotw(k, omega):
    return float(np.dot(k, omega))


def solve_chi0(H, r, divisor_floor=1e-8):
    """Generator removing the angle-only block (0, r).

    Returns (chi0, energy_increment, min_divisor); the residual
    {chi0, omega.p} + f0 - <f0> vanishes by construction.
    """
    f0 = H.blocks.get((0, r), TrigSeries.zero(H.dims, H.caps))
    avg = average_over_angles(f0)
    e_inc = float(avg.coeffs[0]) if len(avg) else 0.0
    osc = oscillating_part(f0)
    min_div = math.inf
    if osc.is_zero():
        return TrigSeries.zero(H.dims, H.caps), e_inc, min_div
    terms = []
    m, l, lb, k, parity = unpack_keys(osc.keys, *H.dims)
    for i in range(len(osc.keys)):
        d = _kdotw(k[i], H.omega)
        if abs(d) <= divisor_floor:
            raise SmallDivisor(f"k={tuple(k[i])}", abs(d))
        min_div = min(min_div, abs(d))
        c = float(osc.coeffs[i])
        if parity[i] == COS:
            terms.append((list(m[i]), list(l[i]), list(lb[i]), list(k[i]),
                          SIN, -c / d))
        else:
            terms.append((list(m[i]), list(l[i]), list(lb[i]), list(k[i]),
                          COS, c / d))
    return TrigSeries.from_terms(H.dims, H.caps, terms), e_inc, min_div


def solve_X2(H, r, divisor_floor=1e-8):
    """Generator removing the p-linear, angle-dependent part of (2, r)."""
    f2 = H.blocks.get((2, r), TrigSeries.zero(H.dims, H.caps))
    if f2.is_zero():
        return TrigSeries.zero(H.dims, H.caps), math.inf
    m, l, lb, k, parity = unpack_keys(f2.keys, *H.dims)
    min_div = math.inf
    terms = []
    for i in range(len(f2.keys)):
        if m[i].sum() != 1 or np.abs(k[i]).sum() == 0:
            continue
        d = _kdotw(k[i], H.omega)
        if abs(d) <= divisor_floor:
            raise SmallDivisor(f"k={tuple(k[i])}", abs(d))
        min_div = min(min_div, abs(d))
        c = float(f2.coeffs[i])
        if parity[i] == COS:
            terms.append((list(m[i]), list(l[i]), list(lb[i]), list(k[i]),
                          SIN, -c / d))
        else:
            terms.append((list(m[i]), list(l[i]), list(lb[i]), list(k[i]),
                          COS, c / d))
    return TrigSeries.from_terms(H.dims, H.caps, terms), min_div


def _solve_in_basis(f_part, basis_terms, N2, dims, caps):
    """Solve {chi, N2} + f_part = 0 on the span of basis_terms."""
    basis = [TrigSeries.from_terms(dims, caps, [t]) for t in basis_terms]
    keys = [int(b.keys[0]) for b in basis]
    signs = {key: float(b.coeffs[0]) for key, b in zip(keys, basis)}
    index = {key: i for i, key in enumerate(keys)}
    n = len(basis)
    A = np.zeros((n, n))
    for col, b in enumerate(basis):
        Tb = poisson(b, N2, caps)
        for key, val in zip(Tb.keys, Tb.coeffs):
            A[index[int(key)], col] = val / signs[int(key)]
    rhs = np.zeros(n)
    for key, val in zip(f_part.keys, f_part.coeffs):
        rhs[index[int(key)]] = -val / signs[int(key)]
    coef = np.linalg.solve(A, rhs)
    out = TrigSeries.zero(dims, caps)
    for c, b in zip(coef, basis):
        out = add(out, b.scale(c))
    return out


def solve_chi1(H, r, divisor_floor=1e-8):
    """Generator removing the transverse-linear block (1, r)."""
    n1, n2 = H.dims
    f1 = H.blocks.get((1, r), TrigSeries.zero(H.dims, H.caps))
    if f1.is_zero():
        return TrigSeries.zero(H.dims, H.caps), math.inf
    N2 = _normal_quadratic(H)
    m, l, lb, k, parity = unpack_keys(f1.keys, n1, n2)
    groups = {}
    for i in range(len(f1.keys)):
        j = int(np.argmax(l[i] + lb[i]))
        groups.setdefault((tuple(k[i]), j), []).append(i)
    chi = TrigSeries.zero(H.dims, H.caps)
    min_div = math.inf
    for (kv, j), idxs in sorted(groups.items()):
        kw = _kdotw(kv, H.omega)
        divs = [abs(H.Omega[j])] if all(v == 0 for v in kv) else \
               [abs(kw + H.Omega[j]), abs(kw - H.Omega[j])]
        for d in divs:
            if d <= divisor_floor:
                raise SmallDivisor(f"k={kv}, Omega_{j+1}", d)
            min_div = min(min_div, d)
        lj = [0] * n2
        lj[j] = 1
        zeros = [0] * n2
        if all(v == 0 for v in kv):
            basis_terms = [([0] * n1, lj, zeros, list(kv), COS, 1.0),
                           ([0] * n1, zeros, lj, list(kv), COS, 1.0)]
        else:
            basis_terms = [([0] * n1, lj, zeros, list(kv), par, 1.0)
                           for par in (COS, SIN)] + \
                          [([0] * n1, zeros, lj, list(kv), par, 1.0)
                           for par in (COS, SIN)]
        sel = np.zeros(len(f1.keys), bool)
        sel[idxs] = True
        part = TrigSeries(H.dims, H.caps, f1.keys[sel], f1.coeffs[sel],
                          _sorted=True)
        chi = add(chi, _solve_in_basis(part, basis_terms, N2, H.dims,
                                       H.caps))
    return chi, min_div


def solve_Y2(H, r, divisor_floor=1e-8):
    """Generator removing the transverse-quadratic, angle-dependent
    part of block (2, r)."""
    n1, n2 = H.dims
    f2 = H.blocks.get((2, r), TrigSeries.zero(H.dims, H.caps))
    if f2.is_zero():
        return TrigSeries.zero(H.dims, H.caps), math.inf
    N2 = _normal_quadratic(H)
    m, l, lb, k, parity = unpack_keys(f2.keys, n1, n2)
    groups = {}
    for i in range(len(f2.keys)):
        if (l[i] + lb[i]).sum() != 2 or np.abs(k[i]).sum() == 0:
            continue
        tot = l[i] + lb[i]
        pair = tuple(np.nonzero(tot)[0])
        if len(pair) == 1:
            pair = (pair[0], pair[0])
        groups.setdefault((tuple(k[i]), pair), []).append(i)
    chi = TrigSeries.zero(H.dims, H.caps)
    min_div = math.inf
    for (kv, (a, b)), idxs in sorted(groups.items()):
        kw = _kdotw(kv, H.omega)
        for sa in (1, -1):
            for sb in (1, -1):
                d = abs(kw + sa * H.Omega[a] + sb * H.Omega[b])
                if d <= divisor_floor:
                    raise SmallDivisor(
                        f"k={kv}, Omega_{a+1}, Omega_{b+1}", d)
                min_div = min(min_div, d)
        zeros = [0] * n2
        monos = []
        if a == b:
            for la, lba in ((2, 0), (1, 1), (0, 2)):
                l_ = list(zeros)
                lb_ = list(zeros)
                l_[a], lb_[a] = la, lba
                monos.append((l_, lb_))
        else:
            for la, lba in ((1, 0), (0, 1)):
                for lb_2, lbb in ((1, 0), (0, 1)):
                    l_ = list(zeros)
                    lb_ = list(zeros)
                    l_[a] += la
                    lb_[a] += lba
                    l_[b] += lb_2
                    lb_[b] += lbb
                    monos.append((l_, lb_))
        basis_terms = [([0] * n1, l_, lb_, list(kv), par, 1.0)
                       for (l_, lb_) in monos for par in (COS, SIN)]
        sel = np.zeros(len(f2.keys), bool)
        sel[idxs] = True
        part = TrigSeries(H.dims, H.caps, f2.keys[sel], f2.coeffs[sel],
                          _sorted=True)
        chi = add(chi, _solve_in_basis(part, basis_terms, N2, H.dims,
                                       H.caps))
    return chi, min_div


def diagonalize(quadratic, Omega_prev, divisor_floor=1e-8):
    """Bring a k = 0 transverse quadratic to Sum Omega (xi^2+eta^2)/2."""
    S = quadratic_hessian(quadratic)
    return symplectic_diagonalize(S, divisor_floor=divisor_floor)


def _split_block2(H, r):
    """(p-linear k=0 part, quadratic k=0 part, leftover) of block (2, r)."""
    f2 = H.blocks.get((2, r), TrigSeries.zero(H.dims, H.caps))
    if f2.is_zero():
        return np.zeros(H.dims[0]), TrigSeries.zero(H.dims, H.caps), f2
    avg = average_over_angles(f2)
    rest = f2 - avg
    n1, n2 = H.dims
    omega_inc = np.zeros(n1)
    quad = TrigSeries.zero(H.dims, H.caps)
    m, l, lb, k, parity = unpack_keys(avg.keys, n1, n2)
    for i in range(len(avg.keys)):
        if m[i].sum() == 1:
            omega_inc[int(np.argmax(m[i]))] += avg.coeffs[i]
        else:
            quad = add(quad, TrigSeries(H.dims, H.caps, avg.keys[i:i + 1],
                                        avg.coeffs[i:i + 1], _sorted=True))
    return omega_inc, quad, rest


def normalization_step(H, cfg, r):
    """One full step; mutates H and returns (StepReport, StepMaps)."""
    smax = cfg.rbar
    floor = cfg.divisor_floor
    residuals = {}

    f0 = H.blocks.get((0, r), TrigSeries.zero(H.dims, H.caps))
    chi0, e_inc, d0 = solve_chi0(H, r, floor)
    apply_generator(H, chi0, 0, r, smax, cfg.prune_rel)
    H.energy += e_inc
    left = H.blocks.pop((0, r), TrigSeries.zero(H.dims, H.caps))
    left = add(left, TrigSeries.constant(-e_inc, H.dims, H.caps))
    residuals["chi0"] = l1_norm(prune(left, 1e-12 * max(l1_norm(f0), 1e-300)))

    f1 = H.blocks.get((1, r), TrigSeries.zero(H.dims, H.caps))
    chi1, d1 = solve_chi1(H, r, floor)
    apply_generator(H, chi1, 1, r, smax, cfg.prune_rel)
    left = H.blocks.pop((1, r), TrigSeries.zero(H.dims, H.caps))
    residuals["chi1"] = l1_norm(prune(left, 1e-12 * max(l1_norm(f1), 1e-300)))

    f2 = H.blocks.get((2, r), TrigSeries.zero(H.dims, H.caps))
    x2, dx = solve_X2(H, r, floor)
    y2, dy = solve_Y2(H, r, floor)
    apply_generator(H, x2, 2, r, smax, cfg.prune_rel)
    apply_generator(H, y2, 2, r, smax, cfg.prune_rel)
    omega_inc, quad, left = _split_block2(H, r)
    H.blocks.pop((2, r), None)
    residuals["chi2"] = l1_norm(prune(left, 1e-12 * max(l1_norm(f2), 1e-300)))
    H.omega = H.omega + omega_inc

    n2 = H.dims[1]
    if n2 > 0:
        quad_total = add(quad, _transverse_normal(H))
        M, Omega_new = diagonalize(quad_total, H.Omega, floor)
        dnorm = float(np.abs(M - np.eye(2 * n2)).sum())
        if dnorm > 0.0:
            H.blocks = {key: apply_linear_transverse(blk, M, H.caps)
                        for key, blk in H.blocks.items()}
        H.Omega = Omega_new
    else:
        M = np.zeros((0, 0))
        dnorm = 0.0

    H.blocks = {key: prune(blk, cfg.prune_rel * l1_norm(blk))
                for key, blk in H.blocks.items()}
    H.blocks = {key: blk for key, blk in H.blocks.items() if len(blk)}

    report = StepReport(
        r=r,
        norms={"chi0": l1_norm(chi0), "chi1": l1_norm(chi1),
               "x2": l1_norm(x2), "y2": l1_norm(y2), "D": dnorm},
        omega=H.omega.copy(), Omega=H.Omega.copy(), energy=H.energy,
        min_divisor=min(d0, d1, dx, dy),
        residuals=residuals)
    maps = StepMaps(r, chi0, chi1, x2, y2, M if dnorm > 0.0 else None)
    return report, maps


def _transverse_normal(H):
    n1, n2 = H.dims
    terms = []
    for j in range(n2):
        for which in range(2):
            l = [0] * n2
            l[j] = 2
            args = ([0] * n1, l, [0] * n2) if which == 0 else \
                   ([0] * n1, [0] * n2, l)
            terms.append((*args, [0] * n1, COS, H.Omega[j] / 2.0))
    return TrigSeries.from_terms(H.dims, H.caps, terms)


def check_rules(x2_norms, cfg):
    """Convergence rules on the X2 norm sequence (1-indexed)."""
    denom = sum(x2_norms[:2])
    if not x2_norms or denom == 0.0:
        return True, "zero perturbation"
    for r in range(3, len(x2_norms) + 1):
        if x2_norms[r - 1] / denom >= cfg.ruleA_base ** (r - 1):
            return False, f"rule A failed at r={r}"
    if x2_norms[-1] / denom >= cfg.ruleB_ratio:
        return False, "rule B failed"
    return True, "rules A and B satisfied"


def run(H0, cfg, seed=None, keep_intermediate=False):
    """Full normalization; H0 is consumed (work on a copy)."""
    H = H0.copy()
    stack = TransformStack(H.dims, tuple(seed.Istar) if seed else
                           (float("nan"),) * H.dims[0])
    if H.pre_map is not None:
        stack.entries.append(StepMaps(0, linear=H.pre_map))
    reports = []
    intermediates = [H.copy()] if keep_intermediate else None
    converged = False
    reason = ""
    for r in range(1, cfg.rbar + 1):
        try:
            report, maps = normalization_step(H, cfg, r)
        except (SmallDivisor, EllipticityLost, DegenerateFrequencies) as e:
            reason = f"aborted at step {r}: {e}"
            return RunResult(H, reports, stack, False, reason, intermediates)
        reports.append(report)
        stack.entries.append(maps)
        if keep_intermediate:
            intermediates.append(H.copy())
    x2_norms = [rep.norms["x2"] for rep in reports]
    converged, reason = check_rules(x2_norms, cfg)
    return RunResult(H, reports, stack, converged, reason, intermediates)


# -- numeric coordinate maps -------------------------------------------

def flow_points(chi, pts, time=1.0, rtol=1e-12, atol=1e-14):
    """Time-`time` Hamiltonian flow of chi applied to points.

    pts has shape (npts, 2 n1 + 2 n2) ordered (p, q, xi, eta).
    """
    if chi.is_zero() or len(pts) == 0:
        return pts.copy()
    n1, n2 = chi.dims
    dp, dq, dxi, deta = gradient_series(chi)
    npts = pts.shape[0]

    def rhs(t, zflat):
        z = zflat.reshape(npts, -1)
        p, q = z[:, :n1], z[:, n1:2 * n1]
        xi = z[:, 2 * n1:2 * n1 + n2]
        eta = z[:, 2 * n1 + n2:]
        out = np.empty_like(z)
        for j in range(n1):
            out[:, j] = -evaluate(dq[j], p, q, xi, eta)
            out[:, n1 + j] = evaluate(dp[j], p, q, xi, eta)
        for j in range(n2):
            out[:, 2 * n1 + j] = -evaluate(deta[j], p, q, xi, eta)
            out[:, 2 * n1 + n2 + j] = evaluate(dxi[j], p, q, xi, eta)
        return out.ravel()

    sol = solve_ivp(rhs, (0.0, time), pts.ravel(), rtol=rtol, atol=atol,
                    method="DOP853", dense_output=False)
    if not sol.success:
        raise SeriesError(f"flow integration failed: {sol.message}")
    return sol.y[:, -1].reshape(npts, -1)


def _apply_linear_points(M, pts, n1, n2):
    out = pts.copy()
    out[:, 2 * n1:] = pts[:, 2 * n1:] @ M.T
    return out


def step_map_points(maps, pts, n1, n2, inverse=False):
    """Apply one step's coordinate change psi_r (or its inverse).

    psi_r = flow(-1, chi0) o flow(-1, chi1) o flow(-1, X2)
            o flow(-1, Y2) o linear.
    """
    gens = [maps.chi0, maps.chi1, maps.x2, maps.y2]
    if not inverse:
        if maps.linear is not None:
            pts = _apply_linear_points(maps.linear, pts, n1, n2)
        for chi in reversed(gens):
            if chi is not None and len(chi):
                pts = flow_points(chi, pts, time=-1.0)
    else:
        for chi in gens:
            if chi is not None and len(chi):
                pts = flow_points(chi, pts, time=1.0)
        if maps.linear is not None:
            pts = _apply_linear_points(np.linalg.inv(maps.linear), pts,
                                       n1, n2)
    return pts


def stack_map_points(stack, pts, inverse=False):
    """Map normal-form points to the assembly coordinates (or back)."""
    n1, n2 = stack.dims
    entries = stack.entries if inverse else list(reversed(stack.entries))
    for maps in entries:
        pts = step_map_points(maps, pts, n1, n2, inverse=inverse)
    return pts


def map_to_original(stack, point):
    """Normal-form point (p, Q, xi, eta) -> mode state (Y, X)."""
    n1, n2 = stack.dims
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    pts = stack_map_points(stack, pts)
    Istar = np.asarray(stack.Istar)
    out = []
    for z in pts:
        p, q = z[:n1], z[n1:2 * n1]
        xi, eta = z[2 * n1:2 * n1 + n2], z[2 * n1 + n2:]
        I = Istar + p
        if np.any(I < 0):
            raise SeriesError("negative action during inversion")
        Y = np.concatenate([np.sqrt(2 * I) * np.cos(q), xi])
        X = np.concatenate([np.sqrt(2 * I) * np.sin(q), eta])
        out.append((Y, X))
    return out[0] if len(out) == 1 else out


def map_from_original(stack, Y, X):
    """Mode state -> normal-form coordinates (p, q, xi, eta)."""
    n1, n2 = stack.dims
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    I = 0.5 * (Y[:n1] ** 2 + X[:n1] ** 2)
    q = np.arctan2(X[:n1], Y[:n1])
    p = I - np.asarray(stack.Istar)
    z = np.concatenate([p, q, Y[n1:], X[n1:]])[None, :]
    z = stack_map_points(stack, z, inverse=True)
    return z[0]
