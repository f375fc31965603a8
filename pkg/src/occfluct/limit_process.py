"""The (1+beta)-stable limit process xi: constants, characteristic functions and path sampling.

xi_t is the stable integral of g_t(r, x) = 1[0,t](r) int_r^t p_{u-r}(x) du against a totally
right-skewed (1+beta)-stable random measure with Lebesgue control. Everything is computed on
a set of space-time cells (r_n, rho_ni) that serves both as a quadrature rule for the
log-characteristic function and as the partition for the noise field:

* time: Gauss-Legendre on each segment between consecutive requested times, graded towards
  the right end (where the kernel of that time degenerates);
* space: radial, uniform in log|x| with a per-time-node range covering all active kernel
  widths (t_j - r)**(1/alpha); beyond both ends the integrand follows a known power law and
  the remainder is folded into the end weights.

Because sampled values are sums g * M over the same cells, their characteristic function is
exactly the quadrature value; refinement only moves both together towards the continuum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .particle_system import ModelParams
from .rng import as_generator
from .stable_density import get_evaluator, sphere_area
from .stable_sampling import sample_skewed_standard


@dataclass(frozen=True)
class LimitConstants:
    K: float
    K1: float
    H: float
    intermediate: bool


def limit_constants(params: ModelParams) -> LimitConstants:
    b = params.beta
    K1 = -params.V / (1.0 + b) * math.cos(0.5 * math.pi * (1.0 + b))
    if b == 1.0:
        K1 = params.V / 2.0  # cos(pi) = -1 exactly
    K = K1 ** (1.0 / (1.0 + b))
    return LimitConstants(K=K, K1=K1, H=params.H, intermediate=params.intermediate)


@dataclass(frozen=True)
class QuadSpec:
    """Resolution knobs: Gauss nodes per time segment, grading power, log-radius step, padding."""

    n_time: int = 48
    grading: float = 3.0
    h: float = 0.1
    pad_lo: float = 9.0  # radial grid starts at exp(-pad_lo) * smallest kernel width
    pad_hi: float = 7.0  # and ends at exp(pad_hi) * largest width (alpha < 2)

    def coarser(self):
        return QuadSpec(max(8, self.n_time // 2), self.grading, 2 * self.h, self.pad_lo, self.pad_hi)


@dataclass(frozen=True)
class KernelGrid:
    times: np.ndarray  # requested t_1 < ... < t_k
    r: np.ndarray  # time nodes, shape (n,)
    rho: np.ndarray  # radii, shape (n, m)
    volume: np.ndarray  # space-time cell volumes, shape (n, m)
    g: np.ndarray  # kernel values, shape (k, n, m); zero where r >= t_j
    params: ModelParams
    spec: QuadSpec

    @property
    def n_cells(self) -> int:
        return self.volume.size


def _time_nodes(times, spec):
    x, w = leggauss(spec.n_time)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    q = spec.grading
    rs, ws = [], []
    edges = np.concatenate(([0.0], times))
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        delta = b - a
        # tau = b - r = delta * u**q clusters nodes at the right end
        rs.append(b - delta * u**q)
        ws.append(delta * q * u ** (q - 1.0) * wu)
    if not rs:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(rs), np.concatenate(ws)


def _end_exponents(params):
    d, a, p = params.d, params.alpha, 1.0 + params.beta
    lo = d if d < a else d + (a - d) * p
    hi = None if a == 2.0 else d - (d + a) * p
    return lo, hi


def build_kernel_grid(params: ModelParams, times, spec: QuadSpec | None = None, cutoff: float | None = None) -> KernelGrid:
    """Cells and kernel values for the requested times; ``cutoff`` truncates |x| <= cutoff sharply."""
    spec = spec or QuadSpec()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing and nonnegative")
    ev = get_evaluator(params.alpha, params.d)
    a, d = params.alpha, params.d
    r, wt = _time_nodes(times[times > 0], spec)
    e_lo, e_hi = _end_exponents(params)
    if e_lo <= 0:
        raise ValueError("integrand is not integrable at x = 0 for these parameters")
    # radial range per node from the active kernel widths
    active = times[None, :] > r[:, None]
    tau = np.where(active, times[None, :] - r[:, None], np.nan)
    wmin = np.nanmin(tau, axis=1) ** (1.0 / a)
    wmax = np.nanmax(tau, axis=1) ** (1.0 / a)
    s_lo = np.log(wmin) - spec.pad_lo
    s_hi = np.log(wmax) + (spec.pad_hi if a < 2 else math.log(40.0))
    if cutoff is not None:
        s_hi = np.full_like(s_hi, math.log(cutoff))
        s_lo = np.minimum(s_lo, s_hi - 1.0)
    m = int(math.ceil(np.max(s_hi - s_lo) / spec.h)) + 1
    steps = (s_hi - s_lo) / (m - 1)
    s = s_lo[:, None] + steps[:, None] * np.arange(m)[None, :]
    rho = np.exp(s)
    area = sphere_area(d)
    radial = area * rho**d * steps[:, None]
    radial[:, 0] *= 0.5
    radial[:, -1] *= 0.5
    radial[:, 0] += area * rho[:, 0] ** d / e_lo
    if e_hi is not None and cutoff is None:
        radial[:, -1] += area * rho[:, -1] ** d / (-e_hi)
    volume = radial * wt[:, None]
    g = np.zeros((len(times),) + rho.shape)
    for j, t in enumerate(times):
        live = r < t
        if np.any(live):
            g[j, live] = ev.integrated_kernel(rho[live], (t - r[live])[:, None])
    return KernelGrid(times, r, rho, volume, g, params, spec)


def _log_charfn_on_grid(grid: KernelGrid, z) -> complex:
    z = np.asarray(z, dtype=float)
    if z.shape != grid.times.shape:
        raise ValueError("one z per grid time is required")
    if not np.any(z):
        return 0j
    p = 1.0 + grid.params.beta
    tan = math.tan(0.5 * math.pi * p) if grid.params.beta < 1 else 0.0
    S = np.tensordot(z, grid.g, axes=1)
    mod = np.abs(S) ** p * grid.volume
    return complex(-np.sum(mod), np.sum(mod * np.sign(S)) * tan)


@dataclass(frozen=True)
class CharFnValue:
    value: complex
    error: float


def log_charfn(params: ModelParams, times, z, spec: QuadSpec | None = None, grid: KernelGrid | None = None,
               with_error: bool = False):
    """log E exp(i sum z_j xi_{t_j}) by space-time quadrature.

    With ``with_error`` the value is returned together with the difference from a grid of half
    the resolution, as a conservative error estimate.
    """
    times = np.asarray(times, dtype=float)
    z = np.asarray(z, dtype=float)
    if not np.any(z):
        return CharFnValue(0j, 0.0) if with_error else 0j
    keep = times > 0
    if grid is None:
        grid = build_kernel_grid(params, times[keep], spec)
        zz = z[keep]
    else:
        if not np.array_equal(grid.times, times):
            raise ValueError("grid was built for different times")
        zz = z
    val = _log_charfn_on_grid(grid, zz)
    if not with_error:
        return val
    coarse = build_kernel_grid(params, grid.times, grid.spec.coarser())
    err = abs(val - _log_charfn_on_grid(coarse, zz))
    return CharFnValue(val, err)


def charfn_table(params, t, zs, spec=None):
    """exp(log_charfn) of the single-time marginal xi_t over a z-grid."""
    grid = build_kernel_grid(params, [t], spec)
    return np.array([np.exp(_log_charfn_on_grid(grid, [z])) for z in np.atleast_1d(zs)])


def sample_xi(grid: KernelGrid, stream, size: int = 1, chunk_cells: int = 2**21) -> np.ndarray:
    """Joint draws of (xi_{t_1}, ..., xi_{t_k}) from one noise field; shape (size, k)."""
    rng = as_generator(stream)
    p = 1.0 + grid.params.beta
    scale = grid.volume.ravel() ** (1.0 / p)
    g = grid.g.reshape(len(grid.times), -1) * scale[None, :]
    ncell = scale.size
    out = np.zeros((size, len(grid.times)))
    per = max(1, chunk_cells // ncell)
    for i in range(0, size, per):
        n = min(per, size - i)
        m = sample_skewed_standard(p, rng, (n, ncell))
        out[i:i + n] = m @ g.T
    return out


def integrability_value(params: ModelParams, R: float | None = None, t: float = 1.0,
                        spec: QuadSpec | None = None) -> float:
    """int_{|x|<R} int_0^t (int_r^t p_{u-r}(x) du)**(1+beta) dr dx; R = None integrates all space."""
    grid = build_kernel_grid(params, [t], spec, cutoff=R)
    return float(np.sum(grid.g[0] ** (1.0 + params.beta) * grid.volume))


def subfbm_shape(s, t, h):
    """s**h + t**h - ((s+t)**h + |s-t|**h) / 2."""
    return s**h + t**h - 0.5 * ((s + t) ** h + abs(s - t) ** h)


def gaussian_covariance(params: ModelParams, s: float, t: float, spec=None) -> float:
    """Cov(xi_s, xi_t) at beta = 1 read off the two-time log-characteristic function."""
    if params.beta != 1.0:
        raise ValueError("covariance exists only for beta = 1")
    times = np.array(sorted({s, t}))
    grid = build_kernel_grid(params, times, spec)
    if len(times) == 1:
        return -2.0 * _log_charfn_on_grid(grid, [1.0]).real
    L11 = _log_charfn_on_grid(grid, [1.0, 1.0]).real
    L10 = _log_charfn_on_grid(grid, [1.0, 0.0]).real
    L01 = _log_charfn_on_grid(grid, [0.0, 1.0]).real
    # log-char fn = -Var/2 for a centered Gaussian pair
    return -(L11 - L10 - L01)
