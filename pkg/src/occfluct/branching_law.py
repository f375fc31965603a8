"""Critical offspring law with generating function s + (1 - s)**(1+beta) / (1+beta).

For k >= 2, p_k = |binom(1+beta, k)| / (1+beta); p_0 = 1/(1+beta); p_1 = 0.
The survival function has the closed form

    P(X > k) = |binom(beta, k)| / (1+beta),   k >= 1,

which follows from the partial-sum identity for alternating binomial series. The sampler
inverts this survival function, so draws are exact with no tail truncation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .rng import as_generator

# beyond this the lgamma-based survival loses resolution; reported as a capability limit
MAX_EXACT_COUNT = 10**15


class OffspringOverflow(RuntimeError):
    pass


def _check_beta(beta):
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")


def offspring_pmf(beta: float, k) -> np.ndarray | float:
    """Offspring probabilities p_k, via the log-space recurrence."""
    _check_beta(beta)
    k_arr = np.atleast_1d(np.asarray(k))
    if np.any(k_arr < 0):
        raise ValueError("k must be nonnegative")
    kmax = int(k_arr.max())
    probs = offspring_table_probs(beta, kmax)
    out = probs[k_arr]
    return out if np.ndim(k) else float(out[0])


def offspring_table_probs(beta: float, kmax: int) -> np.ndarray:
    """p_0..p_kmax. Terms for k >= 2 are positive, so the recurrence runs in log space
    without sign cancellation: p_{k+1} = p_k (k - 1 - beta) / (k + 1)."""
    a = 1.0 + beta
    probs = np.zeros(kmax + 1)
    probs[0] = 1.0 / a
    if kmax < 2:
        return probs
    if beta == 1.0:
        probs[2] = 0.5
        return probs
    ks = np.arange(2, kmax)
    logp2 = math.log(a * beta / 2.0 / a)
    steps = np.log((ks - 1.0 - beta) / (ks + 1.0))
    probs[2] = math.exp(logp2)
    probs[3:] = np.exp(logp2 + np.cumsum(steps))
    return probs


def offspring_survival(beta: float, k) -> np.ndarray:
    """P(X > k) = |binom(beta, max(k, 1))| / (1+beta), computed through log-gamma."""
    _check_beta(beta)
    k = np.maximum(np.asarray(k, dtype=float), 1.0)
    if beta == 1.0:
        return np.where(k < 2, 0.5, 0.0)
    logc = math.log(beta) + gammaln(k - beta) - gammaln(1.0 - beta) - gammaln(k + 1.0)
    return np.exp(logc) / (1.0 + beta)


def offspring_partial_mean_gap(beta: float, k) -> np.ndarray:
    """1 - sum_{j<=k} j p_j = |binom(beta - 1, k - 1)|, exact."""
    _check_beta(beta)
    k = np.asarray(k, dtype=float)
    if beta == 1.0:
        return np.where(k < 2, 1.0, 0.0)
    return np.exp(gammaln(k - beta) - gammaln(1.0 - beta) - gammaln(k))


def offspring_gf(beta: float, s):
    _check_beta(beta)
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s >= 1)):
        raise ValueError("s must lie in [0, 1)")
    return s + (1.0 - s) ** (1.0 + beta) / (1.0 + beta)


@dataclass(frozen=True)
class OffspringTable:
    beta: float
    cutoff: int
    probs: np.ndarray = field(repr=False)
    tail_mass: float
    # survival levels P(X > k) for k = 0..cutoff, decreasing
    survival: np.ndarray = field(repr=False)


def build_offspring_sampler(beta: float, cutoff: int = 10**6, tail_eps: float | None = None) -> OffspringTable:
    _check_beta(beta)
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    probs = offspring_table_probs(beta, cutoff)
    surv = offspring_survival(beta, np.arange(cutoff + 1))
    tail = float(surv[-1])
    if tail_eps is not None and tail >= tail_eps:
        # the tail is sampled exactly anyway; the flag only documents the table coverage
        pass
    return OffspringTable(beta=beta, cutoff=cutoff, probs=probs, tail_mass=tail, survival=surv)


def offspring_from_uniform(table: OffspringTable, u) -> np.ndarray:
    """Map survival levels u in (0, 1] to counts: X = min{k : P(X > k) < u}.

    The table handles k <= cutoff; rarer levels are resolved by bisection on the closed-form
    survival function, so the map is exact for all levels representable in double precision.
    """
    u = np.asarray(u, dtype=float)
    neg = -table.survival
    # first index with survival < u  <=>  -survival > -u
    k = np.searchsorted(neg, -u, side="right")
    out = k.astype(np.int64)
    tail = k > table.cutoff
    if np.any(tail):
        out[tail] = _tail_invert(table.beta, u[tail], table.cutoff)
    return out


def _tail_invert(beta, u, lo_start):
    if beta == 1.0:
        return np.full(u.shape, 2, dtype=np.int64)
    lo = np.full(u.shape, float(lo_start))  # survival(lo) >= u
    hi = np.maximum(lo * 2, lo + 1)
    for _ in range(200):
        grow = offspring_survival(beta, hi) >= u
        if not np.any(grow):
            break
        hi = np.where(grow, hi * 2, hi)
    if np.any(hi > MAX_EXACT_COUNT):
        raise OffspringOverflow(
            f"offspring count beyond {MAX_EXACT_COUNT:.0e} requested; survival level {u.min():.3e} "
            "is below the resolution of the exact tail inversion")
    while True:
        active = hi - lo > 1
        if not np.any(active):
            break
        mid = np.floor(0.5 * (lo + hi))
        ge = offspring_survival(beta, mid) >= u
        lo = np.where(active & ge, mid, lo)
        hi = np.where(active & ~ge, mid, hi)
    return hi.astype(np.int64)


def sample_offspring(table: OffspringTable, stream, size=None):
    rng = as_generator(stream)
    # 1 - random() lies in (0, 1], matching the survival-level convention
    u = 1.0 - rng.random(size=size if size is not None else 1)
    k = offspring_from_uniform(table, u)
    return k if size is not None else int(k[0])
