"""Statistical checks shared by the experiments: ECFs, distances, log-log fits, inequality trials."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator


@dataclass(frozen=True)
class EcfTable:
    z: np.ndarray
    values: np.ndarray
    n: int

    @property
    def band(self) -> float:
        """1/sqrt(N) scale of the pointwise standard error."""
        return 1.0 / math.sqrt(self.n) if self.n else 0.0


def ecf(samples, z) -> EcfTable:
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError("no finite samples")
    z = np.asarray(z, dtype=float)
    vals = np.empty(z.shape, dtype=complex)
    # chunk so that len(z) x chunk stays small
    step = max(1, 2**22 // max(z.size, 1))
    acc = np.zeros(z.size, dtype=complex)
    for i in range(0, x.size, step):
        acc += np.exp(1j * np.outer(z.ravel(), x[i:i + step])).sum(axis=1)
    vals[...] = (acc / x.size).reshape(z.shape)
    vals[z == 0] = 1.0
    return EcfTable(z, vals, int(x.size))


def ecf_distance(a: EcfTable, b) -> float:
    """Max modulus difference over the shared grid; ``b`` is a table or a callable char. fn."""
    if isinstance(b, EcfTable):
        if a.z.shape != b.z.shape or not np.allclose(a.z, b.z):
            raise ValueError("tables are on different z-grids")
        other = b.values
    else:
        other = np.asarray(b(a.z), dtype=complex)
    return float(np.max(np.abs(a.values - other)))


def space_time_pairing(t, path, weight, check: bool = False) -> float:
    """int_0^1 <X_T(t), phi> psi(t) dt by the trapezoid rule on the record grid.

    ``weight`` is a TimeWeight; box-shaped psi is integrated exactly on each cell by clipping
    the cell to [a, b] and interpolating the path linearly.
    """
    t = np.asarray(t, dtype=float)
    path = np.asarray(path, dtype=float)
    if t[0] > 0 or t[-1] < 1 - 1e-12:
        raise ValueError("record grid must cover [0, 1]")
    a, b, h = weight.a, weight.b, weight.height
    if h == 0:
        return 0.0
    lo = np.clip(t[:-1], a, b)
    hi = np.clip(t[1:], a, b)
    width = t[1:] - t[:-1]
    fl = path[:-1] + (path[1:] - path[:-1]) * (lo - t[:-1]) / width
    fh = path[:-1] + (path[1:] - path[:-1]) * (hi - t[:-1]) / width
    val = h * float(np.sum(0.5 * (fl + fh) * (hi - lo)))
    if check and len(t) > 4:
        half = space_time_pairing(t[::2], path[::2], weight) if (len(t) - 1) % 2 == 0 else val
        if abs(half - val) > 1e-2 * (abs(val) + 1e-12):
            raise ValueError("record grid too coarse: halving disagreement above 1%")
    return val


@dataclass
class LogLogFit:
    slope: float
    stderr: float
    intercept: float
    excluded: int = 0


def loglog_fit(x, y) -> LogLogFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (y > 0) & (x > 0) & np.isfinite(y)
    excluded = int((~ok).sum())
    lx, ly = np.log(x[ok]), np.log(y[ok])
    if lx.size < 3:
        raise ValueError("need at least three positive points")
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = max(lx.size - 2, 1)
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(np.sum((lx - lx.mean()) ** 2)))
    return LogLogFit(float(coef[0]), se, float(coef[1]), excluded)


def cross_term(a, b, beta):
    """(a+b)**(1+beta) - a**(1+beta) - b**(1+beta) for a, b >= 0 without cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = 1.0 + beta
    big = np.maximum(a, b)
    small = np.minimum(a, b)
    safe = np.where(big > 0, big, 1.0)
    eps = small / safe
    out = safe**p * (np.expm1(p * np.log1p(eps)) - eps**p)
    return np.where(big > 0, out, 0.0)


@dataclass
class InequalityReport:
    trials: int
    violations: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not any(self.violations.values())


def inequality_suite(n_trials: int, stream, rtol: float = 1e-12) -> InequalityReport:
    """Random checks of the elementary bounds for c(a, b) = (a+b)**p - a**p - b**p, p = 1+beta.

    For a, b >= 0 and beta <= delta <= 1:
      0 <= c(a, b) <= (1+beta) a**delta b**(p-delta)
      c(a, b) >= beta b**beta a                                   (b >= a)
      ||a-b|**p - a**p - b**p| <= (3+beta) a**delta b**(p-delta)
      ||a-b|**p sgn(a-b) + b**p - a**p| <= (1+beta) a**delta b**(p-delta)
    Magnitudes are log-uniform over many decades, with some exact zeros and ties.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    rng = as_generator(stream)
    # log-uniform magnitudes over many decades, plus some exact zeros and ties
    a = np.exp(rng.uniform(-20, 20, n_trials))
    b = np.exp(rng.uniform(-20, 20, n_trials))
    a[: n_trials // 50] = 0.0
    b[n_trials // 50: n_trials // 25] = a[n_trials // 50: n_trials // 25]
    beta = rng.uniform(0.0, 1.0, n_trials)
    beta[beta == 0] = 0.5
    u = rng.random(n_trials)
    delta = beta + (1.0 - beta) * u
    p = 1.0 + beta
    cross = cross_term(a, b, beta)
    scale = np.maximum(a, b) ** p
    tol = rtol * scale + 1e-300
    upper = (1.0 + beta) * _pow(a, delta) * _pow(b, p - delta)
    checks = {"nonnegative": cross >= -tol, "upper": cross <= upper + tol}
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    checks["lower"] = cross_term(lo, hi, beta) >= beta * hi**beta * lo - tol
    absdiff = np.abs(a - b) ** p
    checks["consequence_3_plus_beta"] = np.abs(absdiff - a**p - b**p) <= (3.0 + beta) / (1.0 + beta) * upper + tol
    checks["consequence_1_plus_beta"] = np.abs(absdiff * np.sign(a - b) + b**p - a**p) <= upper + tol
    report = InequalityReport(n_trials)
    for name, ok in checks.items():
        bad = np.flatnonzero(~ok)
        report.violations[name] = int(bad.size)
        if bad.size:
            i = bad[0]
            report.witnesses[name] = (float(a[i]), float(b[i]), float(delta[i]), float(beta[i]))
    return report


def _pow(x, e):
    # 0**0 = 1 convention, 0**positive = 0
    return np.where(x > 0, np.power(np.where(x > 0, x, 1.0), e), np.where(e == 0, 1.0, 0.0))
