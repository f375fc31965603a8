import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from occfluct.harness import (
    cross_term,
    ecf,
    ecf_distance,
    inequality_suite,
    loglog_fit,
    space_time_pairing,
)
from occfluct.particle_system import TimeWeight
from occfluct.rng import RngStream

Z = np.linspace(-3, 3, 25)


def test_ecf_of_constant_zero():
    t = ecf(np.zeros(500), Z)
    assert np.all(t.values == 1.0)
    assert ecf_distance(t, lambda z: np.ones_like(z)) == 0.0


def test_ecf_at_origin_and_bounded():
    x = RngStream(1, 0).generator().standard_cauchy(1000)
    t = ecf(x, Z)
    assert t.values[Z == 0][0] == 1.0
    assert np.all(np.abs(t.values) <= 1 + 1e-15)
    assert t.band == pytest.approx(1 / math.sqrt(1000))


def test_ecf_gaussian_band():
    n = 10**5
    x = RngStream(2, 0).generator().standard_normal(n)
    assert ecf_distance(ecf(x, Z), lambda z: np.exp(-z**2 / 2)) < 4 / math.sqrt(n)


def test_ecf_distance_metric_sanity():
    rng = RngStream(3, 0).generator()
    a = ecf(rng.standard_normal(300), Z)
    b = ecf(rng.exponential(size=300), Z)
    assert ecf_distance(a, a) == 0.0
    assert ecf_distance(a, b) == ecf_distance(b, a) > 0


def test_ecf_rejects_empty_and_mismatch():
    with pytest.raises(ValueError):
        ecf(np.array([np.nan]), Z)
    with pytest.raises(ValueError):
        ecf_distance(ecf([0.0, 1.0], Z), ecf([0.0, 1.0], Z[:5]))


def test_ecf_drops_flagged_nans():
    t = ecf(np.array([0.0, np.nan, 0.0]), Z)
    assert t.n == 2


def test_pairing_zero_weight():
    t = np.linspace(0, 1, 11)
    assert space_time_pairing(t, np.sin(t), TimeWeight(0, 1, 0.0)) == 0.0


def test_pairing_linear_path_exact():
    t = np.linspace(0, 1, 7)
    path = 2.0 * t
    # int_{0.25}^{0.8} 2t * 3 dt
    val = space_time_pairing(t, path, TimeWeight(0.25, 0.8, 3.0))
    assert val == pytest.approx(3 * (0.8**2 - 0.25**2), rel=1e-14)


def test_pairing_delta_limit():
    t = np.linspace(0, 1, 2001)
    path = np.cos(3 * t) + t**2
    t0 = 0.37
    vals = [space_time_pairing(t, path, TimeWeight.delta_approx(t0, h)) for h in (0.1, 0.03, 0.01)]
    err = np.abs(np.array(vals) - (math.cos(3 * t0) + t0**2))
    assert np.all(np.diff(err) < 0)
    assert err[-1] < 1e-4


@settings(max_examples=30, deadline=None)
@given(c1=st.floats(-5, 5), c2=st.floats(-5, 5), a=st.floats(0, 0.9), w=st.floats(0.05, 0.1))
def test_pairing_is_linear(c1, c2, a, w):
    t = np.linspace(0, 1, 41)
    p1, p2 = np.sin(5 * t), t**3
    weight = TimeWeight(a, a + w)
    lhs = space_time_pairing(t, c1 * p1 + c2 * p2, weight)
    rhs = c1 * space_time_pairing(t, p1, weight) + c2 * space_time_pairing(t, p2, weight)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_pairing_coarse_grid_flagged():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        space_time_pairing(t, np.array([0, 5, -5, 5, 0.0]), TimeWeight(), check=True)


def test_loglog_exact_power():
    x = np.logspace(2, 4, 7)
    fit = loglog_fit(x, 3 * x**-2.0)
    assert abs(fit.slope + 2) < 1e-10
    assert fit.stderr < 1e-10


def test_loglog_excludes_nonpositive():
    x = np.logspace(0, 2, 6)
    y = x**-1.0
    y[2] = 0.0
    fit = loglog_fit(x, y)
    assert fit.excluded == 1
    assert fit.slope == pytest.approx(-1.0)


def test_cross_term_examples():
    assert cross_term(0.0, 3.0, 0.5) == 0.0
    assert cross_term(1.0, 1.0, 0.5) == pytest.approx(2**1.5 - 2, rel=1e-15)
    assert cross_term(1.0, 1.0, 0.5) == pytest.approx(0.8284, abs=1e-4)
    assert cross_term(1.0, 1.0, 0.5) <= 1.5


@settings(max_examples=200, deadline=None)
@given(a=st.floats(1e-12, 1e6), b=st.floats(1e-12, 1e6), beta=st.floats(0.01, 1.0))
def test_cross_term_matches_direct_when_well_conditioned(a, b, beta):
    p = 1 + beta
    direct = (a + b) ** p - a**p - b**p
    if min(a, b) / max(a, b) > 1e-3:
        assert float(cross_term(a, b, beta)) == pytest.approx(direct, rel=1e-9)
    assert cross_term(a, b, beta) >= 0


def test_cross_term_first_order_regime():
    # for a << b the cross term is (1+beta) a b**beta to first order
    a, b, beta = 1e-12, 2.0, 0.5
    assert float(cross_term(a, b, beta)) == pytest.approx(1.5 * a * b**beta, rel=1e-9)


def test_inequality_suite_zero_violations():
    rep = inequality_suite(10**5, RngStream(12, 0))
    assert rep.passed, rep.witnesses
    assert rep.trials == 10**5
    assert set(rep.violations) == {"nonnegative", "upper", "lower", "consequence_3_plus_beta",
                                   "consequence_1_plus_beta"}


def test_inequality_suite_deterministic():
    a = inequality_suite(10**4, RngStream(5, 5))
    b = inequality_suite(10**4, RngStream(5, 5))
    assert a.violations == b.violations
