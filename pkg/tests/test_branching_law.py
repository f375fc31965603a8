import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occfluct.branching_law import (
    OffspringOverflow,
    build_offspring_sampler,
    offspring_from_uniform,
    offspring_gf,
    offspring_partial_mean_gap,
    offspring_pmf,
    offspring_survival,
    offspring_table_probs,
    sample_offspring,
)
from occfluct.harness import loglog_fit
from occfluct.rng import RngStream


def _exact_pmf(beta: Fraction, k: int) -> Fraction:
    # Taylor coefficient of s + (1-s)**(1+beta)/(1+beta) in exact rational arithmetic
    a = 1 + beta
    c = Fraction(1)
    for j in range(k):
        c *= (a - j) / (j + 1)
    val = (-1) ** k * c / a
    return val + (1 if k == 1 else 0)


def test_binary_case():
    p = offspring_table_probs(1.0, 10)
    assert p[0] == 0.5 and p[2] == 0.5
    assert p.sum() == 1.0


def test_beta_half_values():
    p = offspring_pmf(0.5, [0, 1, 2, 3])
    assert np.allclose(p, [2 / 3, 0, 1 / 4, 1 / 24], rtol=1e-14, atol=0)


@pytest.mark.parametrize("beta", ["1/3", "1/2", "4/5"])
def test_pmf_against_rational_taylor(beta):
    b = Fraction(beta)
    exact = [float(_exact_pmf(b, k)) for k in range(40)]
    assert np.allclose(offspring_table_probs(float(b), 39), exact, rtol=1e-12, atol=0)


@settings(max_examples=40, deadline=None)
@given(beta=st.floats(0.01, 1.0))
def test_p1_zero_and_nonnegative(beta):
    p = offspring_table_probs(beta, 500)
    assert p[1] == 0.0
    assert np.all(p >= 0)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_mass_with_tail_is_one(beta):
    K = 10**6
    total = math.fsum(offspring_table_probs(beta, K)) + float(offspring_survival(beta, K))
    assert abs(total - 1) < 1e-12


@settings(max_examples=30, deadline=None)
@given(beta=st.floats(0.05, 0.99), k=st.integers(1, 3000))
def test_survival_closed_form(beta, k):
    p = offspring_table_probs(beta, k)
    assert math.isclose(1 - math.fsum(p), float(offspring_survival(beta, k)), rel_tol=1e-9, abs_tol=1e-14)


def test_partial_mean_gap_closed_form():
    for beta in (0.3, 0.5, 0.8):
        k = 5000
        p = offspring_table_probs(beta, k)
        brute = 1 - math.fsum(np.arange(k + 1) * p)
        assert math.isclose(brute, float(offspring_partial_mean_gap(beta, k)), rel_tol=1e-8)


def test_partial_mean_gap_bound_at_million():
    K = 10**6
    assert offspring_partial_mean_gap(0.5, K) < 1e-3
    assert offspring_partial_mean_gap(0.8, K) < 1e-3
    # the gap decays like K**-beta, so beta = 0.3 stays near 1e-2
    assert math.isclose(float(offspring_partial_mean_gap(0.3, K)), 0.0122, rel_tol=0.02)


def test_gf_values():
    assert offspring_gf(0.5, 0.0) == pytest.approx(1 / 1.5)
    assert offspring_gf(0.5, 0.5) == pytest.approx(0.5 + 0.5**1.5 / 1.5, rel=1e-15)
    assert offspring_gf(0.5, 0.5) == pytest.approx(0.7357, abs=1e-4)
    s = 1 - 1e-9
    assert offspring_gf(0.5, s) == pytest.approx(1.0, abs=1e-8)
    h = 1e-7
    deriv = (offspring_gf(0.5, s) - offspring_gf(0.5, s - h)) / h
    assert deriv == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("beta", [0.3, 0.5, 0.8])
def test_gf_series_consistency(beta):
    K = 10**6
    p = offspring_table_probs(beta, K)
    tail = float(offspring_survival(beta, K))
    for s in np.arange(1, 10) / 10:
        series = np.polynomial.polynomial.polyval(s, p[:2000]) + np.dot(p[2000:], s ** np.arange(2000, K + 1))
        # remaining mass beyond K contributes at most tail * s**K
        assert abs(series - offspring_gf(beta, s)) < 1e-8 + tail * s**K


def test_gf_rejects_s_one():
    with pytest.raises(ValueError):
        offspring_gf(0.5, 1.0)


def test_k_power_times_pmf_converges():
    beta = 0.5
    ks = np.unique(np.logspace(3, 6, 7).astype(int))
    p = offspring_table_probs(beta, ks[-1])[ks]
    c = ks ** (2 + beta) * p
    rel = np.abs(np.diff(c)) / c[1:]
    assert np.all(c > 0)
    assert np.all(np.diff(rel) < 0)


def test_sampler_binary():
    t = build_offspring_sampler(1.0, cutoff=10)
    x = sample_offspring(t, RngStream(1, 0), size=10**5)
    assert set(np.unique(x)) <= {0, 2}
    assert abs((x == 2).mean() - 0.5) < 3 * 0.5 / math.sqrt(1e5)


def test_sampler_frequencies_small_k():
    t = build_offspring_sampler(0.5, cutoff=1000)
    n = 10**6
    x = sample_offspring(t, RngStream(2, 0), size=n)
    for k in (0, 2, 3, 4):
        pk = offspring_pmf(0.5, k)
        assert abs((x == k).mean() - pk) < 4 * math.sqrt(pk * (1 - pk) / n)
    assert not np.any(x == 1)


def test_sampler_mean_is_one():
    t = build_offspring_sampler(0.5)
    n = 10**6
    x = sample_offspring(t, RngStream(3, 0), size=n).astype(float)
    assert abs(x.mean() - 1) < 3 * x.std() / math.sqrt(n)


def test_tail_inversion_is_exact_beyond_cutoff():
    t = build_offspring_sampler(0.5, cutoff=100)
    levels = np.logspace(-12, -3, 50)
    k = offspring_from_uniform(t, levels)
    # X = min{k : P(X > k) < u}
    assert np.all(offspring_survival(0.5, k) < levels)
    assert np.all(offspring_survival(0.5, k - 1) >= levels)


def test_tail_slope():
    beta = 0.5
    t = build_offspring_sampler(beta, cutoff=100)
    rng = RngStream(4, 0).generator()
    u = rng.random(10**6) * float(offspring_survival(beta, 100))
    x = offspring_from_uniform(t, u)
    ks = np.logspace(2.2, 4, 10)
    surv = np.array([(x > k).mean() for k in ks])
    assert abs(loglog_fit(ks, surv).slope / -(1 + beta) - 1) < 0.1


def test_overflow_is_reported():
    t = build_offspring_sampler(0.3, cutoff=100)
    with pytest.raises(OffspringOverflow):
        offspring_from_uniform(t, np.array([1e-300]))


def test_reject_bad_beta():
    for b in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            offspring_pmf(b, 2)
