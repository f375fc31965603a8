"""Monte Carlo engine for the (d, alpha, beta)-branching system and its occupation-time fluctuations.

Particles start as a Poisson field of unit intensity in a box, move as symmetric alpha-stable
processes, and branch at rate V with the critical heavy-tailed offspring law. Motion is exact
in law: a particle is only ever moved by stable increments to a branching instant or to an
observation knot, so ``dt`` affects nothing but the trapezoid rule for the occupation integral.

Replicates are simulated in vectorized batches. A batch owns one random stream derived from
(master seed, batch index); a replicate whose population would exceed the cap is aborted and
flagged (its values become NaN), never dropped.

The deterministic side is the Laplace functional of the space-time paired fluctuation field,
obtained from a Picard iteration of its nonlinear Volterra equation (d = 1).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .branching_law import build_offspring_sampler, offspring_from_uniform, offspring_survival
from .rng import RngStream, as_generator
from .stable_density import get_evaluator
from .stable_sampling import sample_isotropic_increment


class PopulationCapExceeded(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ModelParams:
    """Model tuple (d, alpha, beta, V) with unit Lebesgue intensity.

    ``d`` may be non-integer for the quadrature routines; simulation requires an integer.
    """

    d: float
    alpha: float
    beta: float
    V: float = 1.0

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"d must be positive, got {self.d}")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.V >= 0:
            raise ValueError(f"V must be nonnegative, got {self.V}")

    @property
    def intensity(self) -> float:
        return 1.0

    @property
    def lower_dim(self) -> float:
        return self.alpha / self.beta

    @property
    def upper_dim(self) -> float:
        return self.alpha * (1.0 + self.beta) / self.beta

    @property
    def intermediate(self) -> bool:
        """alpha/beta < d < alpha(1+beta)/beta."""
        return self.lower_dim < self.d < self.upper_dim

    def require_intermediate(self):
        if not self.intermediate:
            raise ValueError(
                f"dimension condition alpha/beta < d < alpha(1+beta)/beta violated: "
                f"{self.lower_dim:.6g} < {self.d} < {self.upper_dim:.6g} is false")

    @property
    def F_exponent(self) -> float:
        b = self.beta
        return (2.0 + b - (self.d / self.alpha) * b) / (1.0 + b)

    @property
    def H(self) -> float:
        return self.F_exponent

    def to_dict(self):
        return asdict(self)


def norming_F(T: float, params: ModelParams) -> float:
    if not T > 0:
        raise ValueError("T must be positive")
    return float(T) ** params.F_exponent


@dataclass(frozen=True)
class TestFunction:
    """Gaussian bump amplitude * exp(-|x - center|**2 / (2 width**2))."""

    __test__ = False  # keep pytest from collecting this class

    center: tuple
    width: float = 1.0
    amplitude: float = 1.0
    shape: str = "gaussian"

    def __post_init__(self):
        if self.shape != "gaussian":
            raise ValueError(f"unsupported test-function shape {self.shape!r}")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @classmethod
    def bump(cls, d: int, width=1.0, amplitude=1.0, center=None):
        return cls(center=tuple(np.zeros(d)) if center is None else center, width=width, amplitude=amplitude)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def integral(self) -> float:
        return self.amplitude * (2.0 * math.pi * self.width**2) ** (self.dim / 2.0)

    def scaled(self, factor):
        return TestFunction(self.center, self.width, self.amplitude * factor)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            r2 = (x - c[0]) ** 2
        else:
            r2 = np.sum((x - c) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * r2 / self.width**2)


@dataclass(frozen=True)
class TimeWeight:
    """psi = height on [a, b] inside [0, 1]; chi(u) = int_u^1 psi."""

    a: float = 0.0
    b: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.a < self.b <= 1.0:
            raise ValueError("need 0 <= a < b <= 1")
        if self.height < 0:
            raise ValueError("height must be nonnegative")

    @classmethod
    def delta_approx(cls, t0, half_width):
        a, b = max(0.0, t0 - half_width), min(1.0, t0 + half_width)
        return cls(a, b, 1.0 / (b - a))

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.a) & (t <= self.b), self.height, 0.0)

    def chi(self, u):
        u = np.asarray(u, dtype=float)
        return self.height * np.clip(self.b - np.maximum(u, self.a), 0.0, None)


@dataclass
class PopulationState:
    positions: np.ndarray
    clocks: np.ndarray
    time: float = 0.0
    cap: int = 10**6

    def __post_init__(self):
        if len(self.positions) > self.cap:
            raise PopulationCapExceeded(f"{len(self.positions)} particles above cap {self.cap}")
        if np.any(self.clocks <= self.time):
            raise ValueError("branch clocks must exceed the current time")

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass
class OccupationRecord:
    """Centered occupation integrals int_0^t <N_s - lambda, phi> ds at the knots of one replicate."""

    times: np.ndarray
    values: np.ndarray
    raw: np.ndarray  # <N_t, phi> at the knots
    dt: float
    replicate: int
    seed: int
    stream_id: int
    flag: str = ""
    params: ModelParams | None = None
    T: float | None = None
    box: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.flag)

    def to_json(self) -> str:
        return json.dumps({
            "replicate": self.replicate, "seed": self.seed, "stream": self.stream_id,
            "flag": self.flag, "dt": self.dt, "box": self.box, "T": self.T,
            "times": [round(float(t), 12) for t in self.times],
            "values": [None if not np.isfinite(v) else float(v) for v in self.values],
        }, sort_keys=True)


def sample_initial_population(L: float, d: int, stream, cap: int = 10**6, V: float = 1.0) -> PopulationState:
    """Poisson field of unit intensity on [-L, L]^d with exponential(V) branch clocks."""
    if not L > 0:
        raise ValueError("box half-width must be positive")
    mean = (2.0 * L) ** d
    if mean > cap:
        raise PopulationCapExceeded(
            f"expected initial count {mean:.3g} exceeds cap {cap}; shrink the box or raise the cap")
    rng = as_generator(stream)
    n = rng.poisson(mean)
    pos = rng.uniform(-L, L, size=(n, d))
    return PopulationState(pos, _clocks(rng, V, n, 0.0), 0.0, cap)


def _clocks(rng, V, n, t0):
    if V == 0:
        return np.full(n, np.inf)
    return t0 + rng.exponential(1.0 / V, size=n)


# ----- truncation rule ------------------------------------------------------------------------------

def expected_outside(params: ModelParams, phi: TestFunction, L: float, s) -> np.ndarray:
    """E<N_s, phi> contributed by initial particles outside the box [-L, L]^d.

    Exact for d = 1 (Gauss-Hermite over phi, one-sided stable tail). For d >= 2 the box is
    replaced by its inscribed ball around the bump center, which overstates the outside mass.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    ev = get_evaluator(params.alpha, params.d)
    out = np.zeros(s.shape)
    live = s > 0
    scale = s[live] ** (1.0 / params.alpha)
    if params.d == 1:
        gx, gw = np.polynomial.hermite_e.hermegauss(40)
        x = phi.center[0] + phi.width * gx
        w = gw / math.sqrt(2.0 * math.pi) * phi.integral
        right = 0.5 * ev.radial_survival(np.maximum(L - x[None, :], 0.0) / scale[:, None])
        left = 0.5 * ev.radial_survival(np.maximum(L + x[None, :], 0.0) / scale[:, None])
        out[live] = np.sum(w * (right + left), axis=1)
    else:
        rad = max(L - float(np.linalg.norm(phi.center)), 0.0)
        out[live] = phi.integral * ev.radial_survival(rad / scale)
    return out


def choose_box(params: ModelParams, phi: TestFunction, horizon: float, eps: float = 1e-3) -> float:
    """Smallest half-width L with int_0^horizon E<N_s^out, phi> ds <= eps lambda(phi) horizon."""
    s = np.linspace(0.0, horizon, 65)

    def excess(L):
        return np.trapezoid(expected_outside(params, phi, L, s), s) - eps * phi.integral * horizon

    lo = 1.0 + max(abs(c) for c in phi.center) + 3 * phi.width
    if excess(lo) <= 0:
        return lo
    hi = 2 * lo
    while excess(hi) > 0:
        hi *= 2
        if hi > 1e12:
            raise ValueError("no finite box meets the truncation target")
    for _ in range(60):
        mid = math.sqrt(lo * hi)
        lo, hi = (lo, mid) if excess(mid) <= 0 else (mid, hi)
        if hi / lo < 1.001:
            break
    return hi


# ----- simulation ---------------------------------------------------------------------------------

def knot_grid(horizon: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = max(1, int(math.ceil(horizon / dt - 1e-9)))
    return np.linspace(0.0, horizon, n + 1)


def _advance(pos, tcur, target, alpha, rng):
    dur = target - tcur
    move = dur > 0
    if np.any(move):
        pos[move] += sample_isotropic_increment(alpha, dur[move], pos.shape[1], rng, size=int(move.sum()))
    return pos


def _run_batch(params, phi, knots, rng, reps, table, cap, initial=None, L=None):
    """Evolve ``reps`` independent replicates together; returns (raw <N,phi> per knot, flags)."""
    d = int(params.d)
    a = params.alpha
    if initial is None:
        counts = rng.poisson((2.0 * L) ** d, size=reps)
        pos = rng.uniform(-L, L, size=(int(counts.sum()), d))
    else:
        init = np.atleast_2d(np.asarray(initial, dtype=float)).reshape(-1, d)
        counts = np.full(reps, len(init))
        pos = np.tile(init, (reps, 1))
    rep = np.repeat(np.arange(reps), counts)
    tcur = np.zeros(len(pos))
    clock = _clocks(rng, params.V, len(pos), 0.0)
    alive = np.ones(reps, dtype=bool)
    size = counts.astype(np.int64)
    alive[size > cap] = False
    # levels below this survival value would produce more than ``cap`` offspring
    cap_level = float(offspring_survival(params.beta, cap)) if params.V > 0 else 0.0
    raw = np.zeros((reps, len(knots)))
    raw[:, 0] = np.bincount(rep, weights=phi(pos), minlength=reps)
    for j in range(1, len(knots)):
        t1 = knots[j]
        while True:
            fire = np.flatnonzero(clock <= t1)
            if fire.size == 0:
                break
            pos[fire] = _advance(pos[fire], tcur[fire], clock[fire], a, rng)
            tb = clock[fire]
            u = 1.0 - rng.random(fire.size)
            huge = u < cap_level
            k = np.zeros(fire.size, dtype=np.int64)
            k[~huge] = offspring_from_uniform(table, u[~huge])
            prep = rep[fire]
            if np.any(huge):
                alive[np.unique(prep[huge])] = False
            size += np.bincount(prep, weights=k - 1, minlength=reps).astype(np.int64)
            alive &= size <= cap
            k[~alive[prep]] = 0
            kids_pos = np.repeat(pos[fire], k, axis=0)
            kids_t = np.repeat(tb, k)
            keep = np.ones(len(pos), dtype=bool)
            keep[fire] = False
            keep &= alive[rep]
            pos = np.concatenate((pos[keep], kids_pos))
            tcur = np.concatenate((tcur[keep], kids_t))
            clock = np.concatenate((clock[keep], _clocks(rng, params.V, len(kids_t), 0.0) + kids_t))
            rep = np.concatenate((rep[keep], np.repeat(prep, k)))
        pos = _advance(pos, tcur, np.full(len(pos), t1), a, rng)
        tcur[:] = t1
        raw[:, j] = np.bincount(rep, weights=phi(pos), minlength=reps)
    raw[~alive] = np.nan
    return raw, ~alive


def simulate_occupation(params: ModelParams, phi: TestFunction, T: float, tau: float = 1.0,
                        dt: float = 0.05, seed: int = 0, replicas: int = 1, L: float | None = None,
                        eps: float = 1e-3, cap: int = 10**6, batch_particles: int = 2 * 10**5,
                        initial=None, stream_id: int = 0, workers: int = 1) -> list[OccupationRecord]:
    """Simulate ``replicas`` replicates on [0, T tau]; return one record per replicate.

    With ``initial`` (an array of starting positions) every replicate starts from that fixed
    configuration and the record holds the uncentered occupation integral.
    """
    if int(params.d) != params.d:
        raise ValueError("simulation needs an integer dimension")
    d = int(params.d)
    if phi.dim != d:
        raise ValueError("test function dimension does not match d")
    horizon = T * tau
    knots = knot_grid(horizon, dt)
    table = build_offspring_sampler(params.beta, cutoff=10**5)
    if initial is None:
        if L is None:
            L = choose_box(params, phi, horizon, eps)
        per = (2.0 * L) ** d
        if per > cap:
            raise PopulationCapExceeded(
                f"expected initial count {per:.3g} exceeds cap {cap}; shrink the box or raise the cap")
        ext = expected_outside(params, phi, L, knots)
        out_int = np.concatenate(([0.0], np.cumsum(0.5 * (ext[1:] + ext[:-1]) * np.diff(knots))))
        centering = phi.integral * knots - out_int
    else:
        per = len(np.atleast_2d(initial))
        centering = np.zeros(len(knots))
    batch = max(1, int(batch_particles // max(per, 1.0)))
    root = RngStream(seed, stream_id)
    jobs = [(b, min(batch, replicas - b * batch)) for b in range((replicas + batch - 1) // batch)]

    def run(job):
        b, n = job
        return _run_batch(params, phi, knots, root.child(b).generator(), n, table, cap, initial, L)

    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    records = []
    for (b, n), (raw, flags) in zip(jobs, results):
        steps = np.diff(knots)
        occ = np.concatenate((np.zeros((n, 1)), np.cumsum(0.5 * (raw[:, 1:] + raw[:, :-1]) * steps, axis=1)), axis=1)
        vals = occ - centering
        vals[flags] = np.nan
        for i in range(n):
            records.append(OccupationRecord(
                times=knots, values=vals[i], raw=raw[i], dt=dt, replicate=b * batch + i, seed=seed,
                stream_id=root.child(b).stream_id, flag="population cap exceeded" if flags[i] else "",
                params=params, T=T, box=L, meta={"batch": b, "replicas_per_batch": batch}))
    return records


def rescaled_fluctuation(record: OccupationRecord, params: ModelParams, T: float):
    """(t grid, <X_T(t), phi>) with t = time / T."""
    if record.params is not None and (record.params != params or record.T != T):
        raise ValueError("record was produced with different parameters")
    return record.times / T, record.values / norming_F(T, params)


def space_time_pairing_values(records, params, T, weight: TimeWeight):
    """<X~_T, phi x psi> for each record (NaN for flagged ones)."""
    from .harness import space_time_pairing

    return np.array([space_time_pairing(*rescaled_fluctuation(r, params, T), weight) for r in records])


def emit_records(records, fh):
    for r in records:
        fh.write(r.to_json() + "\n")


# ----- Laplace functional --------------------------------------------------------------------------

@dataclass
class VtGrid:
    x: np.ndarray
    t: np.ndarray
    v: np.ndarray  # shape (len(t), len(x))
    bound: np.ndarray  # first Picard iterate: int_0^t T_{t-u} Psi du
    iterations: int
    residual: float
    bracketing: bool  # even iterates increase, odd iterates decrease
    T: float = 0.0

    @property
    def dx(self):
        return self.x[1] - self.x[0]


def _etd_weights(kappa, h):
    z = kappa * h
    small = z < 1e-4
    zs = np.where(small, 1.0, z)
    e = np.exp(-z)
    w0 = np.where(small, 1.0 - z / 2 + z * z / 6, -np.expm1(-zs) / zs)
    w1 = np.where(small, 0.5 - z / 6 + z * z / 24, (zs + np.expm1(-zs)) / zs**2)
    return e, h * (w0 - w1), h * w1


def _duhamel(forcing, e, a, b):
    """v_{i+1} = e v_i + a F_i + b F_{i+1} in Fourier space, v_0 = 0 (F linear on each step)."""
    fh = np.fft.rfft(forcing, axis=1)
    out = np.empty_like(fh)
    out[0] = 0.0
    for i in range(len(fh) - 1):
        out[i + 1] = e * out[i] + a * fh[i] + b * fh[i + 1]
    return np.fft.irfft(out, n=forcing.shape[1], axis=1)


def solve_vT(params: ModelParams, phi: TestFunction, chi: TimeWeight, T: float, half_width: float = 256.0,
             nx: int = 8192, nt: int = 400, tol: float = 1e-11, max_iter: int = 200) -> VtGrid:
    """Picard iteration for v_T on a periodic grid (d = 1).

    v(x,t) = int_0^t T_{t-r}[Psi(., T-r)(1 - v(., r)) - V/(1+beta) v(., r)**(1+beta)](x) dr,
    Psi(x, t) = phi(x) chi(t/T) / F_T. The semigroup is exact in Fourier space and the time
    integral assumes the bracket is linear on each step.
    """
    if params.d != 1:
        raise NotImplementedError("the v_T solver is implemented for d = 1")
    x = -half_width + (2 * half_width / nx) * np.arange(nx)
    t = np.linspace(0.0, T, nt + 1)
    k = 2 * math.pi * np.fft.rfftfreq(nx, d=2 * half_width / nx)
    e, a, b = _etd_weights(np.abs(k) ** params.alpha, T / nt)
    psi = phi(x)[None, :] * chi.chi(1.0 - t / T)[:, None] / norming_F(T, params)
    c = params.V / (1.0 + params.beta)
    v = np.zeros_like(psi)
    bound = None
    prev = [v]
    residual = np.inf
    bracketing = True
    for it in range(1, max_iter + 1):
        vp = np.clip(v, 0.0, None)
        new = _duhamel(psi * (1.0 - v) - c * vp ** (1.0 + params.beta), e, a, b)
        if bound is None:
            bound = new.copy()
        residual = float(np.max(np.abs(new - v)))
        if len(prev) >= 2:
            # the map is decreasing in v, so iterates two apart move monotonically
            step = new - prev[-2]
            sgn = 1.0 if it % 2 == 0 else -1.0
            slack = 1e-12 + 1e-9 * np.max(np.abs(new))
            if np.any(sgn * step < -slack):
                bracketing = False
        prev = [prev[-1], new]
        v = new
        if residual < tol:
            return VtGrid(x, t, v, bound, it, residual, bracketing, T)
    raise NonConvergence("Picard iteration for v_T did not converge", residual)


def check_vT(grid: VtGrid, tol: float = 1e-9) -> dict:
    """Report the 0 <= v <= 1 range and domination by the first iterate at every node."""
    return {
        "min": float(grid.v.min()), "max": float(grid.v.max()),
        "in_unit_range": bool(grid.v.min() >= -tol and grid.v.max() <= 1.0 + tol),
        "dominated": bool(np.all(grid.v <= grid.bound + tol)),
        "bracketing": grid.bracketing,
    }


def laplace_functional(vt: VtGrid, params: ModelParams, phi: TestFunction, chi: TimeWeight, T: float,
                       tol: float = 1e-9) -> float:
    """E exp(-<X~_T, phi x psi>) from the solution of the v_T equation.

    Centered fields give a value >= 1 (Jensen); smaller values indicate a numerical fault.
    """
    psi = phi(vt.x)[None, :] * chi.chi(1.0 - vt.t / T)[:, None] / norming_F(T, params)
    lin = np.trapezoid(np.sum(psi * vt.v, axis=1) * vt.dx, vt.t)
    vp = np.clip(vt.v, 0.0, None)
    nonlin = params.V / (1.0 + params.beta) * np.trapezoid(np.sum(vp ** (1.0 + params.beta), axis=1) * vt.dx, vt.t)
    value = math.exp(lin + nonlin)
    if value < 1.0 - tol:
        raise ArithmeticError(f"Laplace functional {value} below 1 for a centered field")
    return value
