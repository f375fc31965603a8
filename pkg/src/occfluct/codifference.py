"""Codifference of increments of xi a time lag T apart, and its decay exponent kappa.

For 0 <= u < v < s < t the two increments xi_v - xi_u and xi_{T+t} - xi_{T+s} are stable
integrals of R(r, x) and U(r, x). On r <= v,

    U = f = z int_{s+T}^{t+T} p_{r'-r}(x) dr',
    R = g1 = int_u^v p_{r'-r}(x) dr'  (r <= u),    R = g2 = int_r^v p_{r'-r}(x) dr'  (u < r <= v),

and R = 0 for r > v, so the codifference integrand lives on [0, v] x R^d only. With
h(y) = |y|**p (1 - i sgn(y) tan(pi p / 2)), p = 1 + beta,

    D = | int int h(z1 R + z2 U) - h(z1 R) - h(z2 U) dx dr |.

Cross terms are formed relative to the larger of the two fields so that f << g (the regime
of interest at large T) keeps full relative precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .harness import loglog_fit
from .particle_system import ModelParams
from .stable_density import get_evaluator, sphere_area

_GL16 = leggauss(16)
_GL32 = leggauss(32)


@dataclass(frozen=True)
class CodiffQuery:
    u: float
    v: float
    s: float
    t: float
    z1: float = 1.0
    z2: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.u < self.v < self.s < self.t:
            raise ValueError(f"need 0 <= u < v < s < t, got {self.u}, {self.v}, {self.s}, {self.t}")


@dataclass
class CodiffReport:
    params: ModelParams
    query: CodiffQuery
    T: np.ndarray
    D_plus: np.ndarray
    D_minus: np.ndarray
    quad_err: np.ndarray
    slope: float = float("nan")
    stderr: float = float("nan")
    kappa_theory: float = float("nan")
    regime: int = 0
    warnings: list = field(default_factory=list)

    def table(self) -> str:
        lines = ["T\tD_plus\tD_minus\tquad_err"]
        for row in zip(self.T, self.D_plus, self.D_minus, self.quad_err):
            lines.append("\t".join(f"{x:.10e}" for x in row))
        lines.append(f"# slope {self.slope:.6f} stderr {self.stderr:.2e} "
                     f"kappa_theory {self.kappa_theory:.6f} regime {self.regime}")
        return "\n".join(lines)


# ----- kappa ---------------------------------------------------------------------------------------

def kappa_formula(d, alpha, beta):
    """Dependence exponent and regime tag, without checking the dimension window."""
    crit = d / (d + alpha)
    if alpha == 2.0 or beta > crit:
        return d / alpha, 1
    # grouped so that beta = crit gives d/alpha exactly
    return (d / alpha) * (1.0 + (beta - crit)), 2


def kappa_theory(params: ModelParams):
    params.require_intermediate()
    return kappa_formula(params.d, params.alpha, params.beta)


def gamma_plane_classify(gamma: float, beta: float):
    """(kappa, region) in the (gamma, beta)-plane, gamma = d/alpha - 1, for alpha < 2.

    Regions: 1 (kappa = gamma + 1), 2 (kappa = (gamma+1)(1 + beta - (gamma+1)/(gamma+2))),
    0 for the separating curve beta = (gamma+1)/(gamma+2) where kappa = gamma + 1.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    g1 = gamma + 1.0
    curve = g1 / (gamma + 2.0)
    if not beta > 1.0 / g1:
        raise ValueError(f"constraint beta > 1/(gamma+1) = {1.0 / g1:.6g} violated")
    if not beta < 1.0 / gamma:
        raise ValueError(f"constraint beta < 1/gamma = {1.0 / gamma:.6g} violated")
    if math.isclose(beta, curve, rel_tol=0, abs_tol=1e-14):
        if not (math.sqrt(5.0) - 1.0) / 2.0 < gamma < math.sqrt(2.0):
            raise ValueError("separating curve only defined for (sqrt5-1)/2 < gamma < sqrt2")
        return g1, 0
    if beta > curve:
        if not gamma < math.sqrt(2.0):
            raise ValueError("first region needs gamma < sqrt(2)")
        return g1, 1
    if not gamma > (math.sqrt(5.0) - 1.0) / 2.0:
        raise ValueError("second region needs gamma > (sqrt5-1)/2")
    return g1 * (1.0 + beta - curve), 2


# ----- fields and integrands ------------------------------------------------------------------------

def _window_integral(ev, rho, w0, w1, nodes=_GL16, log=False):
    """int_{w0}^{w1} p_w(rho) dw by Gauss-Legendre (in log w when ``log``); broadcasting."""
    x, wt = nodes
    rho, w0, w1 = np.broadcast_arrays(rho, w0, w1)
    if log:
        a, b = np.log(w0), np.log(w1)
        lw = 0.5 * (b - a)[..., None] * x + 0.5 * (a + b)[..., None]
        w = np.exp(lw)
        jac = w * 0.5 * (b - a)[..., None]
    else:
        w = 0.5 * (w1 - w0)[..., None] * x + 0.5 * (w1 + w0)[..., None]
        jac = 0.5 * (w1 - w0)[..., None] * np.ones_like(x)
    vals = ev.radial_density(w, rho[..., None])
    return np.sum(vals * jac * wt, axis=-1)


def _g1(ev, rho, r, u, v):
    """int_{u-r}^{v-r} p_w(rho) dw; kernel difference unless it would cancel."""
    big = ev.integrated_kernel(rho, v - r)
    small = ev.integrated_kernel(rho, u - r)
    out = big - small
    close = small > 0.5 * big
    if np.any(close):
        rr, rc = np.broadcast_arrays(rho, r)
        out[close] = _window_integral(ev, rr[close], (u - rc)[close], (v - rc)[close], _GL32, log=True)
    return out


def kernel_fields(params: ModelParams, T: float, query: CodiffQuery, r, radius):
    """(f, g1, g2) at time r <= v and |x| = radius; f includes the factor z2."""
    ev = get_evaluator(params.alpha, params.d)
    r = np.asarray(r, dtype=float)
    radius = np.asarray(radius, dtype=float)
    if np.any(r > query.v):
        raise ValueError("fields are only needed for r <= v")
    q = query
    f = q.z2 * _window_integral(ev, radius, q.s + T - r, q.t + T - r)
    rr, rad = np.broadcast_arrays(r, radius)
    g1 = np.zeros(rr.shape)
    early = rr < q.u
    if np.any(early):
        g1[early] = _g1(ev, rad[early], rr[early], q.u, q.v)
    g2 = ev.integrated_kernel(rad, np.clip(q.v - rr, 0.0, None))
    return f, g1, g2


def signed_cross(a, b, beta):
    """Real and sign parts of h(a+b) - h(a) - h(b), without cancellation.

    Returns (|a+b|^p - |a|^p - |b|^p, |a+b|^p sgn(a+b) - |a|^p sgn a - |b|^p sgn b).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = 1.0 + beta
    swap = np.abs(b) > np.abs(a)
    big = np.where(swap, b, a)
    small = np.where(swap, a, b)
    mag = np.abs(big)
    safe = np.where(mag > 0, mag, 1.0)
    eps = np.abs(small) / safe
    sig = np.sign(big) * np.sign(small)
    with np.errstate(divide="ignore"):
        grow = np.expm1(p * np.log1p(sig * eps))
    ep = eps**p
    real = safe**p * (grow - ep)
    sgnpart = np.sign(big) * safe**p * (grow - sig * ep)
    zero = mag == 0
    return np.where(zero, 0.0, real), np.where(zero, 0.0, sgnpart)


@dataclass(frozen=True)
class CodiffSpec:
    n_time: int = 32
    grading: float = 3.0
    h: float = 0.1
    pad_lo: float = 9.0
    pad_hi: float = 7.0

    def coarser(self):
        return CodiffSpec(max(8, self.n_time // 2), self.grading, 2 * self.h, self.pad_lo, self.pad_hi)


def _graded(a, b, spec):
    x, w = leggauss(spec.n_time)
    uu = 0.5 * (x + 1.0)
    q = spec.grading
    delta = b - a
    return b - delta * uu**q, delta * q * uu ** (q - 1.0) * 0.5 * w


def _integrals(params, T, query, spec):
    """(int Re cross, int sign cross) over [0, v] x R^d, plus the minimum real cross value."""
    a, d = params.alpha, params.d
    q = query
    beta = params.beta
    area = sphere_area(d)
    segs = []
    if q.u > 0:
        segs.append((0.0, q.u, True))
    segs.append((q.u, q.v, False))
    re_tot = 0.0
    sg_tot = 0.0
    worst = 0.0
    for lo, hi, early in segs:
        r, wr = _graded(lo, hi, spec)
        tau_lo = (hi - r) ** (1.0 / a)
        top = max((q.t + T) ** (1.0 / a), (q.v + 1.0) ** (1.0 / a))
        s_lo = np.log(tau_lo) - spec.pad_lo
        s_hi = math.log(top) + (spec.pad_hi if a < 2 else math.log(40.0))
        m = int(math.ceil(np.max(s_hi - s_lo) / spec.h)) + 1
        steps = (s_hi - s_lo) / (m - 1)
        rho = np.exp(s_lo[:, None] + steps[:, None] * np.arange(m)[None, :])
        f, g1, g2 = kernel_fields(params, T, q, r[:, None], rho)
        g = g1 if early else g2
        re, sg = signed_cross(q.z1 * g, f, beta)
        worst = min(worst, float(np.min(re / np.maximum(np.abs(q.z1 * g) ** (1 + beta), 1e-300))))
        wrad = area * rho**d * steps[:, None]
        wrad[:, 0] *= 0.5
        wrad[:, -1] *= 0.5
        e_lo = d if (early or d < a) else d + (a - d) * beta
        wrad[:, 0] += area * rho[:, 0] ** d / e_lo
        if a < 2:
            wrad[:, -1] += area * rho[:, -1] ** d / ((d + a) * (1 + beta) - d)
        wt = wrad * wr[:, None]
        re_tot += float(np.sum(re * wt))
        sg_tot += float(np.sum(sg * wt))
    return re_tot, sg_tot, worst


def codifference(params: ModelParams, T: float, query: CodiffQuery, spec: CodiffSpec | None = None,
                 with_error: bool = False):
    """D_T(z1, z2; u, v, s, t) for the limit process."""
    if not T > 0:
        raise ValueError("T must be positive")
    spec = spec or CodiffSpec()
    if query.z1 == 0 or query.z2 == 0:
        return (0.0, 0.0) if with_error else 0.0
    p = 1.0 + params.beta
    tan = math.tan(0.5 * math.pi * p) if params.beta < 1 else 0.0
    re, sg, worst = _integrals(params, T, query, spec)
    if query.z1 * query.z2 > 0 and worst < -1e-10:
        raise ArithmeticError(f"negative cross term {worst:.3e} at a quadrature node")
    val = abs(complex(re, -tan * sg))
    if not with_error:
        return val
    re2, sg2, _ = _integrals(params, T, query, spec.coarser())
    return val, abs(val - abs(complex(re2, -tan * sg2)))


def D_plus(params, T, query: CodiffQuery, spec=None, with_error=False):
    q = CodiffQuery(query.u, query.v, query.s, query.t, abs(query.z1), abs(query.z2))
    return codifference(params, T, q, spec, with_error)


def D_minus(params, T, query: CodiffQuery, spec=None, with_error=False):
    q = CodiffQuery(query.u, query.v, query.s, query.t, abs(query.z1), -abs(query.z2))
    return codifference(params, T, q, spec, with_error)


def codiff_sweep(params: ModelParams, query: CodiffQuery, T_grid, spec=None) -> CodiffReport:
    T_grid = np.asarray(T_grid, dtype=float)
    if np.any(np.diff(T_grid) <= 0):
        raise ValueError("T grid must be strictly increasing")
    plus, minus, err = [], [], []
    for T in T_grid:
        dp, ep = D_plus(params, T, query, spec, with_error=True)
        dm, em = D_minus(params, T, query, spec, with_error=True)
        plus.append(dp)
        minus.append(dm)
        err.append(max(ep, em))
    kappa, regime = kappa_formula(params.d, params.alpha, params.beta)
    rep = CodiffReport(params, query, T_grid, np.array(plus), np.array(minus), np.array(err),
                       kappa_theory=kappa, regime=regime)
    fit = estimate_exponent(rep)
    rep.slope, rep.stderr = fit
    return rep


def estimate_exponent(report: CodiffReport, which: str = "plus"):
    """Least-squares slope of log D against log T, with its standard error."""
    T = np.asarray(report.T, dtype=float)
    D = np.asarray(report.D_plus if which == "plus" else report.D_minus, dtype=float)
    if T.size < 5 or T.max() / T.min() < 100:
        raise ValueError("need at least 5 T values spanning two decades")
    bad = ~(D > 0)
    if np.any(bad):
        report.warnings.append(f"{int(bad.sum())} nonpositive D values excluded")
    fit = loglog_fit(T, D)
    return fit.slope, fit.stderr


def envelope_check(report: CodiffReport, slack: float = 2.0, offset: float = 0.05) -> dict:
    """One-point fitted envelopes at the smallest T, checked on the rest of the grid.

    Regime 1: slack^-1 c T^-(d/alpha) <= D_plus <= slack c T^-(d/alpha), c fitted at T_0.
    Regime 2: D <= c_up T^-(d/alpha) delta_up and D_plus >= c_lo T^-(d/alpha) delta_lo, with
    delta = kappa alpha / d -/+ offset and both constants fitted exactly at T_0.
    """
    p = report.params
    T = report.T
    T0 = T[0]
    out = {}
    if report.regime == 1:
        e = p.d / p.alpha
        for name, D in (("plus", report.D_plus), ("minus", report.D_minus)):
            c = D[0] * T0**e
            out[f"upper_{name}"] = bool(np.all(D <= slack * c * T**-e))
        c = report.D_plus[0] * T0**e
        out["lower_plus"] = bool(np.all(report.D_plus >= c / slack * T**-e))
    else:
        base = report.kappa_theory * p.alpha / p.d
        up = (p.d / p.alpha) * (base - offset)
        lo = (p.d / p.alpha) * (base + offset)
        for name, D in (("plus", report.D_plus), ("minus", report.D_minus)):
            out[f"upper_{name}"] = bool(np.all(D <= D[0] * (T / T0) ** -up * (1 + 1e-9)))
        out["lower_plus"] = bool(np.all(report.D_plus >= report.D_plus[0] * (T / T0) ** -lo * (1 - 1e-9)))
    return out
