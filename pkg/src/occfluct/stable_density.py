"""Symmetric alpha-stable transition density p_t(x) in R^d, its time integral, and the semigroup.

Everything reduces to the radial profile p_1(|x|) through self-similarity,
p_t(x) = t**(-d/alpha) p_1(x t**(-1/alpha)). For alpha in {1, 2} the profile is closed
form; otherwise it is tabulated once per (alpha, d) on a log-spaced radius grid from
three routes, each used where it is accurate:

* the power series in |x|**2 near the origin (alpha > 1 only; divergent for alpha < 1),
* the Fourier-Bessel integral, split into panels of one half-period of the Bessel factor,
* the asymptotic (Bergstrom-type) series in |x|**(-n alpha - d) far out, optimally truncated.

The time integral of the density has the closed reduction

    int_0^tau p_w(rho) dw = alpha rho**(alpha-d) M(rho tau**(-1/alpha)),
    M(y0) = int_{y0}^inf y**(d-alpha-1) p_1(y) dy,

so the space-time kernel costs one interpolation per evaluation. ``d`` is a real parameter
throughout (surface measure 2 pi**(d/2) / Gamma(d/2)), which allows boundary studies at
non-integer dimension.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.special import exp1, gammainc, gammaincc, gammaln, jv

_GX, _GW = leggauss(24)
_KCUT = 46.0  # exp(-46) ~ 1e-20 relative truncation of the spectral integrals


class QuadratureError(RuntimeError):
    """Raised when a quadrature does not reach its accuracy target."""


class KernelDivergence(ValueError):
    """The time-integrated kernel is infinite (x = 0 with d >= alpha)."""


def sphere_area(d: float) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _upper_gamma(a: float, x):
    """Unnormalized upper incomplete gamma Gamma(a, x) for real a (any sign), x > 0."""
    x = np.asarray(x, dtype=float)
    if a > 0:
        return gammaincc(a, x) * math.gamma(a)
    if a == 0:
        return exp1(x)
    # Gamma(a, x) = (Gamma(a+1, x) - x**a e**-x) / a
    return (_upper_gamma(a + 1.0, x) - x**a * np.exp(-x)) / a


def _hankel_radial(weight, d: float, rho, kmax: float, extra_width: float = 2.0) -> np.ndarray:
    """(2 pi)^(-d/2) rho^(-nu) int_0^kmax weight(k) k^(d/2) J_nu(k rho) dk, nu = d/2 - 1.

    This is the inverse Fourier transform of a radial spectrum ``weight(|k|)``. Panels are
    one half-period of the Bessel factor wide (capped at ``extra_width``) with geometric
    refinement near k = 0; each panel uses 24-point Gauss-Legendre.
    """
    nu = d / 2.0 - 1.0
    out = np.empty(len(rho))
    for i, r in enumerate(rho):
        width = min(math.pi / r, extra_width) if r > 0 else extra_width
        width = min(width, kmax)
        edges = np.concatenate(([0.0], np.geomspace(width * 1e-9, width, 32)))
        n = int(math.ceil((kmax - width) / width))
        if n > 0:
            edges = np.concatenate((edges, width + width * np.arange(1, n + 1)))
        a, b = edges[:-1], edges[1:]
        half = 0.5 * (b - a)
        k = (half[:, None] * _GX + 0.5 * (a + b)[:, None]).ravel()
        w = (half[:, None] * _GW).ravel()
        if r == 0:
            bes = k ** (d - 1.0) / (2.0**nu * math.gamma(nu + 1.0))
        else:
            bes = k ** (d / 2.0) * jv(nu, k * r) * r ** (-nu)
        out[i] = np.sum(w * weight(k) * bes)
    return (2.0 * math.pi) ** (-d / 2.0) * out


def _small_series(alpha, d, rho, nterms=80):
    """Power series of p_1 in rho**2; returns (value, size of last retained term)."""
    m = np.arange(nterms)
    logc = gammaln((2 * m + d) / alpha) - math.log(alpha) - gammaln(m + 1) - gammaln(m + d / 2.0)
    pref = (2 * math.pi) ** (-d / 2.0) * 2.0 ** (1.0 - d / 2.0)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    with np.errstate(over="ignore", invalid="ignore"):
        logt = logc[None, :] + 2 * m[None, :] * np.log(np.maximum(rho[:, None], 1e-300) / 2.0)
        mags = np.exp(logt)
        terms = ((-1.0) ** m)[None, :] * mags
        return pref * terms.sum(axis=1), pref * (mags[:, -1] + mags.max(axis=1) * 1e-16)


def _large_series(alpha, d, rho, nmax=100):
    """Asymptotic expansion of p_1 at large rho, truncated before its smallest term."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    n = np.arange(1, nmax + 1)
    sgn = (-1.0) ** (n + 1) * np.sin(n * math.pi * alpha / 2.0)
    logc = gammaln(n * alpha / 2.0 + 1.0) + gammaln((n * alpha + d) / 2.0) - gammaln(n + 1.0)
    logt = logc[None, :] - n[None, :] * alpha * np.log(rho[:, None] / 2.0) - d * np.log(rho[:, None])
    with np.errstate(over="ignore"):
        mags = np.exp(logt)
    stop = np.argmin(mags, axis=1)
    mask = np.arange(nmax)[None, :] < stop[:, None]
    val = np.sum(np.where(mask, sgn[None, :] * mags, 0.0), axis=1)
    err = mags[np.arange(len(rho)), stop]
    pref = math.pi ** (-d / 2.0 - 1.0)
    return pref * val, pref * err


@dataclass
class DensityEvaluator:
    """Radial profile of the standard symmetric alpha-stable density in dimension ``d``.

    Immutable after construction; the tables are built eagerly so concurrent readers
    never race on a cache fill.
    """

    alpha: float
    d: float
    rtol: float = 1e-9
    method: str = field(init=False)
    _tables: dict = field(init=False, repr=False, default_factory=dict)

    y_lo: float = 1e-3
    y_hi: float = 1e4
    per_decade: int = 64

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not 0.0 < self.d <= 6.0:
            raise ValueError(f"dimension must lie in (0, 6], got {self.d}")
        if self.alpha == 2.0:
            self.method = "gaussian"
        elif self.alpha == 1.0:
            self.method = "cauchy"
        else:
            self.method = "fourier"
        self._p0 = math.exp(
            math.log(2.0) - self.d * math.log(2.0) - 0.5 * self.d * math.log(math.pi)
            + gammaln(self.d / self.alpha) - math.log(self.alpha) - gammaln(self.d / 2.0))
        # second Taylor coefficient: p_1(y) ~ p0 + p2 y**2 near zero
        self._p2 = -math.exp(
            -0.5 * self.d * math.log(2 * math.pi) + (1.0 - self.d / 2.0) * math.log(2.0)
            + gammaln((2.0 + self.d) / self.alpha) - math.log(self.alpha) - gammaln(1.0 + self.d / 2.0)
        ) / 4.0
        if self.method != "gaussian":
            self._build_tables()

    # ----- radial profile -------------------------------------------------------------------

    def fourier_p1(self, rho) -> np.ndarray:
        """Direct Fourier-Bessel inversion of exp(-|k|**alpha); used for tables and checks."""
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        kmax = _KCUT ** (1.0 / self.alpha)
        a = self.alpha
        return _hankel_radial(lambda k: np.exp(-k**a), self.d, rho, kmax)

    def _p1_accurate(self, rho):
        """Best available pointwise value of p_1 on a set of radii (slow path)."""
        rho = np.asarray(rho, dtype=float)
        if self.method == "cauchy":
            return self._cauchy(rho)
        out = np.full(rho.shape, np.nan)
        big, big_err = _large_series(self.alpha, self.d, np.maximum(rho, 1e-300))
        ok = (rho > 0) & (big_err < 1e-13 * np.abs(big)) & (big > 0)
        out[ok] = big[ok]
        if self.alpha > 1.0:
            small, small_err = _small_series(self.alpha, self.d, rho)
            ok2 = ~ok & (small_err < 1e-13 * np.abs(small)) & (small > 0)
            out[ok2] = small[ok2]
        rest = np.isnan(out)
        if np.any(rest):
            out[rest] = self.fourier_p1(rho[rest])
        if np.any(out <= 0):
            raise QuadratureError("non-positive density value from inversion")
        return out

    def _cauchy(self, rho):
        d = self.d
        c = math.exp(gammaln((d + 1) / 2.0)) / math.pi ** ((d + 1) / 2.0)
        return c / (1.0 + rho**2) ** ((d + 1) / 2.0)

    def _build_tables(self):
        n = int(round(math.log10(self.y_hi / self.y_lo) * self.per_decade)) + 1
        s = np.linspace(math.log(self.y_lo), math.log(self.y_hi), n)
        y = np.exp(s)
        logp = np.log(self._p1_accurate(y))
        self._s = s
        self._logp_spline = CubicSpline(s, logp)
        # spline accuracy check at midpoints
        mid = 0.5 * (s[1:] + s[:-1])
        pick = mid[:: max(1, len(mid) // 24)]
        exact = self._p1_accurate(np.exp(pick))
        err = np.max(np.abs(np.exp(self._logp_spline(pick)) / exact - 1.0))
        if err > 1e3 * self.rtol:
            raise QuadratureError(f"density table interpolation error {err:.2e} above target")
        self.table_error = float(err)
        for e in {self.d - self.alpha, self.d}:
            self._tables[e] = self._moment_table(e)

    def p1(self, rho) -> np.ndarray:
        rho = np.abs(np.asarray(rho, dtype=float))
        if self.method == "gaussian":
            return (4.0 * math.pi) ** (-self.d / 2.0) * np.exp(-(rho**2) / 4.0)
        if self.method == "cauchy":
            return self._cauchy(rho)
        out = np.empty(rho.shape)
        lo = rho < self.y_lo
        hi = rho > self.y_hi
        mid = ~(lo | hi)
        out[lo] = self._p0 + self._p2 * rho[lo] ** 2
        out[mid] = np.exp(self._logp_spline(np.log(rho[mid])))
        if np.any(hi):
            out[hi] = _large_series(self.alpha, self.d, rho[hi])[0]
        return out

    def density(self, t, x) -> np.ndarray:
        """p_t(x) for scalar/array t > 0; ``x`` is a radius array or an array of d-vectors
        (last axis of length d)."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ValueError("density requires t > 0")
        rho = self._radius(x)
        return t ** (-self.d / self.alpha) * self.p1(rho * t ** (-1.0 / self.alpha))

    def radial_density(self, t, rho) -> np.ndarray:
        """p_t at radius ``rho`` (no vector interpretation of the last axis)."""
        t = np.asarray(t, dtype=float)
        return t ** (-self.d / self.alpha) * self.p1(np.asarray(rho, dtype=float) * t ** (-1.0 / self.alpha))

    def _radius(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim >= 1 and self.d == int(self.d) and int(self.d) > 1 and x.shape[-1] == int(self.d):
            return np.linalg.norm(x, axis=-1)
        return np.abs(x)

    # ----- radial moments ----------------------------------------------------------------------

    def _moment_table(self, e):
        """Cumulative tail integral int_y^inf u**(e-1) p_1(u) du on the table grid."""
        fine = np.linspace(self._s[0], self._s[-1], 4 * (len(self._s) - 1) + 1)
        yf = np.exp(fine)
        h = yf**e * np.exp(self._logp_spline(fine))
        # tail beyond y_hi: integrate the asymptotic series termwise
        nmax = 100
        n = np.arange(1, nmax + 1)
        yh = self.y_hi
        sgn = (-1.0) ** (n + 1) * np.sin(n * math.pi * self.alpha / 2.0)
        logc = gammaln(n * self.alpha / 2.0 + 1.0) + gammaln((n * self.alpha + self.d) / 2.0) - gammaln(n + 1.0)
        expo = n * self.alpha + self.d - e  # term ~ y**(e-1-n alpha-d)
        logt = logc - n * self.alpha * math.log(yh / 2.0) - self.d * math.log(yh)
        stop = int(np.argmin(logt))
        tail = math.pi ** (-self.d / 2.0 - 1.0) * float(
            np.sum((sgn * np.exp(logt) * yh**e / expo)[:stop]))
        # composite Simpson in s, accumulated from the top so tiny values keep relative accuracy
        ds = fine[1] - fine[0]
        rev = h[::-1]
        pair = (rev[:-2:2] + 4 * rev[1:-1:2] + rev[2::2]) * ds / 3.0
        cum = np.concatenate(([0.0], np.cumsum(pair)))[::-1] + tail
        coarse_s = fine[::2]
        return CubicSpline(coarse_s, np.log(cum))

    def tail_moment(self, e: float, y0) -> np.ndarray:
        """int_{y0}^inf y**(e-1) p_1(y) dy for y0 > 0 (and y0 = 0 when e > 0)."""
        y0 = np.asarray(y0, dtype=float)
        if self.method == "gaussian":
            safe = np.where(y0 > 0, y0, 1.0)
            val = (4 * math.pi) ** (-self.d / 2.0) * 2.0 ** (e - 1.0) * _upper_gamma(e / 2.0, safe**2 / 4.0)
            if e > 0:
                val = np.where(y0 > 0, val, (4 * math.pi) ** (-self.d / 2.0) * 2.0 ** (e - 1.0) * math.gamma(e / 2.0))
            elif np.any(y0 <= 0):
                raise KernelDivergence("moment diverges at 0 for nonpositive exponent")
            return val
        if e not in self._tables:
            self._tables[e] = self._moment_table(e)
        spl = self._tables[e]
        out = np.empty(y0.shape)
        lo = y0 < self.y_lo
        hi = y0 > self.y_hi
        mid = ~(lo | hi)
        out[mid] = np.exp(spl(np.log(y0[mid])))
        if np.any(hi):
            out[hi] = self._far_moment(e, y0[hi])
        if np.any(lo):
            base = math.exp(float(spl(math.log(self.y_lo))))
            yl = self.y_lo
            z = y0[lo]
            if np.any(z <= 0) and e <= 0:
                raise KernelDivergence("moment diverges at 0 for nonpositive exponent")
            out[lo] = base + self._p0 * _power_int(e, z, yl) + self._p2 * _power_int(e + 2.0, z, yl)
        return out

    def _far_moment(self, e, y0):
        n = np.arange(1, 101)
        sgn = (-1.0) ** (n + 1) * np.sin(n * math.pi * self.alpha / 2.0)
        logc = gammaln(n * self.alpha / 2.0 + 1.0) + gammaln((n * self.alpha + self.d) / 2.0) - gammaln(n + 1.0)
        expo = n * self.alpha + self.d - e
        out = np.empty(y0.shape)
        for i, y in enumerate(y0):
            logt = logc - n * self.alpha * math.log(y / 2.0) - self.d * math.log(y)
            stop = max(int(np.argmin(logt)), 1)
            out[i] = math.pi ** (-self.d / 2.0 - 1.0) * float(np.sum((sgn * np.exp(logt) * y**e / expo)[:stop]))
        return out

    def radial_survival(self, r) -> np.ndarray:
        """P(|X_1| > r) for the standard process in dimension d."""
        r = np.asarray(r, dtype=float)
        if self.method == "gaussian":
            return gammaincc(self.d / 2.0, r**2 / 4.0)
        return np.minimum(sphere_area(self.d) * self.tail_moment(self.d, r), 1.0)

    def radial_cdf(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.method == "gaussian":
            return gammainc(self.d / 2.0, r**2 / 4.0)
        return 1.0 - self.radial_survival(r)

    # ----- time-integrated kernel ----------------------------------------------------------------

    def integrated_kernel(self, rho, tau) -> np.ndarray:
        """int_0^tau p_w(rho) dw for radius ``rho`` >= 0 and elapsed time ``tau`` >= 0."""
        rho, tau = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(tau, dtype=float))
        a, d = self.alpha, self.d
        out = np.zeros(rho.shape)
        pos = tau > 0
        zero = pos & (rho == 0)
        if np.any(zero):
            if d >= a:
                raise KernelDivergence("time-integrated kernel diverges at x = 0 when d >= alpha")
            out[zero] = self._p0 * tau[zero] ** (1.0 - d / a) / (1.0 - d / a)
        live = pos & (rho > 0)
        if np.any(live):
            r, t = rho[live], tau[live]
            y0 = r * t ** (-1.0 / a)
            if d < a:
                # split off the y**(d-a-1) singularity so tiny rho stays accurate
                val = self._kernel_small_d(r, t, y0)
            else:
                val = a * r ** (a - d) * self.tail_moment(d - a, y0)
            out[live] = val
        return out

    def _kernel_small_d(self, r, t, y0):
        a, d = self.alpha, self.d
        res = np.empty(r.shape)
        small = y0 < self.y_lo
        big = ~small
        if np.any(big):
            res[big] = a * r[big] ** (a - d) * self.tail_moment(d - a, y0[big])
        if np.any(small):
            # M(y0) = M(y_lo) + p0 (y_lo**m - y0**m)/m + p2 (...) with m = d - a < 0
            yl = self.y_lo
            if self.method == "gaussian":
                base = float(self.tail_moment(d - a, np.array([yl]))[0])
            else:
                base = math.exp(float(self._tables[d - a](math.log(yl))))
            m = d - a
            z = y0[small]
            rs = r[small]
            # rho**(a-d) * y0**m = t**(1-d/a): the divergent piece is finite after scaling
            part_sing = -self._p0 * t[small] ** (1.0 - d / a) / m
            part_reg = rs ** (a - d) * (base + self._p0 * yl**m / m + self._p2 * _power_int(m + 2.0, z, yl))
            res[small] = a * (part_sing + part_reg)
        return res

    def time_integrated_kernel(self, r, t, x) -> np.ndarray:
        """int_r^t p_{u-r}(x) du for 0 <= r <= t."""
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        if np.any(r > t):
            raise ValueError("time_integrated_kernel needs r <= t")
        return self.integrated_kernel(self._radius(x), t - r)

    # ----- semigroup -------------------------------------------------------------------------------

    def semigroup_apply(self, t: float, phi, x) -> np.ndarray:
        """(T_t phi)(x) = (p_t * phi)(x) for a registered Gaussian bump ``phi``."""
        from .particle_system import TestFunction

        if not isinstance(phi, TestFunction) or phi.shape != "gaussian":
            raise ValueError("semigroup_apply supports registered Gaussian-bump test functions only")
        x = np.asarray(x, dtype=float)
        if t < 0:
            raise ValueError("t must be nonnegative")
        if t == 0:
            return phi(x)
        rho = np.atleast_1d(np.linalg.norm(np.atleast_2d(x) - phi.center, axis=-1)) if phi.dim > 1 \
            else np.atleast_1d(np.abs(x.reshape(-1) - phi.center[0]))
        w2 = phi.width**2
        if self.method == "gaussian":
            var = w2 + 2.0 * t
            val = phi.integral * (2 * math.pi * var) ** (-phi.dim / 2.0) * np.exp(-(rho**2) / (2 * var))
        else:
            a = self.alpha
            kmax = math.sqrt(2.0 * _KCUT / w2)
            if t > 0:
                kmax = min(kmax, (_KCUT / t) ** (1.0 / a))
            val = phi.integral * _hankel_radial(
                lambda k: np.exp(-t * k**a - 0.5 * w2 * k**2), phi.dim, rho, kmax, extra_width=kmax / 64)
        return val.reshape(x.shape[:-1] if phi.dim > 1 else x.shape) if x.ndim else float(val[0])


def _power_int(e, z, zmax):
    """int_z^zmax y**(e-1) dy (log when e == 0)."""
    z = np.asarray(z, dtype=float)
    if e == 0:
        return math.log(zmax) - np.log(z)
    return (zmax**e - z**e) / e


@lru_cache(maxsize=32)
def get_evaluator(alpha: float, d: float) -> DensityEvaluator:
    return DensityEvaluator(float(alpha), float(d))


def density(alpha, d, t, x):
    return get_evaluator(alpha, d).density(t, x)


def time_integrated_kernel(alpha, d, r, t, x):
    return get_evaluator(alpha, d).time_integrated_kernel(r, t, x)
