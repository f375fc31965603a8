import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from occfluct.harness import loglog_fit
from occfluct.particle_system import (
    ModelParams,
    NonConvergence,
    PopulationCapExceeded,
    TestFunction,
    TimeWeight,
    check_vT,
    choose_box,
    emit_records,
    expected_outside,
    laplace_functional,
    norming_F,
    rescaled_fluctuation,
    sample_initial_population,
    simulate_occupation,
    solve_vT,
)
from occfluct.rng import RngStream
from occfluct.stable_density import get_evaluator


def test_params_validation_and_window():
    with pytest.raises(ValueError):
        ModelParams(1, 2.5, 0.5)
    with pytest.raises(ValueError):
        ModelParams(1, 1.5, 0.0)
    assert ModelParams(5, 2.0, 0.5).intermediate
    assert not ModelParams(1, 2.0, 0.5).intermediate
    with pytest.raises(ValueError, match="alpha/beta < d"):
        ModelParams(3, 2.0, 0.5).require_intermediate()


def test_norming_values():
    assert norming_F(100.0, ModelParams(5, 2.0, 0.5)) == pytest.approx(100 ** (5 / 6), rel=1e-14)
    assert norming_F(100.0, ModelParams(5, 2.0, 0.5)) == pytest.approx(46.416, abs=1e-3)
    assert ModelParams(3, 2.0, 1.0).F_exponent == pytest.approx(0.75, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 6), a=st.floats(0.2, 2.0), b=st.floats(0.05, 1.0), T=st.floats(1.01, 1e6))
def test_norming_exponent_is_H(d, a, b, T):
    p = ModelParams(d, a, b)
    assert norming_F(1.0, p) == 1.0
    assert math.log(norming_F(T, p)) / math.log(T) == pytest.approx(p.H, rel=1e-9, abs=1e-12)


def test_test_function_integral():
    phi = TestFunction.bump(1, width=0.6, amplitude=2.5, center=[1.0])
    num, _ = integrate.quad(lambda x: float(phi(np.array([x]))), -np.inf, np.inf, epsabs=1e-13)
    assert abs(num - phi.integral) < 1e-8
    phi2 = TestFunction.bump(2, width=0.4, amplitude=1.2)
    num2, _ = integrate.dblquad(lambda y, x: float(phi2(np.array([x, y]))), -5, 5, -5, 5, epsabs=1e-12)
    assert abs(num2 - phi2.integral) < 1e-8


def test_initial_population_mean_one():
    counts = [sample_initial_population(0.5, 1, RngStream(1, i)).count for i in range(10**4)]
    counts = np.array(counts, dtype=float)
    assert abs(counts.mean() - 1.0) < 3 * counts.std() / 100


def test_initial_population_uniform_in_box():
    st_ = sample_initial_population(20.0, 2, RngStream(2, 0))
    assert np.all(np.abs(st_.positions) <= 20.0)
    assert np.all(st_.clocks > 0)
    assert stats.kstest((st_.positions[:, 0] + 20) / 40, "uniform").pvalue > 1e-3


def test_initial_population_subboxes_independent():
    left, right = [], []
    for i in range(4000):
        x = sample_initial_population(2.0, 1, RngStream(3, i)).positions[:, 0]
        left.append(np.sum(x < 0))
        right.append(np.sum(x >= 0))
    left, right = np.array(left), np.array(right)
    table = np.array([[np.sum((left > 2) & (right > 2)), np.sum((left > 2) & (right <= 2))],
                      [np.sum((left <= 2) & (right > 2)), np.sum((left <= 2) & (right <= 2))]])
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_initial_population_cap():
    with pytest.raises(PopulationCapExceeded):
        sample_initial_population(1000.0, 2, RngStream(0, 0), cap=10**4)


@pytest.mark.parametrize("L", [3.0, 10.0])
def test_expected_outside_against_quadrature(L):
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1, width=0.8)
    ev = get_evaluator(1.5, 1)
    s = 2.0
    f = lambda y: float(ev.semigroup_apply(s, phi, y))
    ref = integrate.quad(f, L, np.inf, limit=400)[0] + integrate.quad(f, -np.inf, -L, limit=400)[0]
    # Gauss-Hermite over phi meets a kink at x = L, so agreement is to quadrature accuracy
    assert float(expected_outside(p, phi, L, s)[0]) == pytest.approx(ref, rel=1e-4)


def test_choose_box_monotone_in_eps():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1)
    assert choose_box(p, phi, 4.0, 1e-2) < choose_box(p, phi, 4.0, 1e-3)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return x.mean(), x.std(ddof=1) / math.sqrt(len(x))


def test_no_branching_mean_is_centered():
    p = ModelParams(1, 1.5, 0.5, V=0.0)
    phi = TestFunction.bump(1)
    recs = simulate_occupation(p, phi, 4.0, dt=0.25, seed=1, replicas=400, L=20.0)
    vals = np.array([r.values for r in recs])
    for j in range(1, vals.shape[1], 4):
        m, se = _mean_se(vals[:, j])
        assert abs(m) < 3 * se


def test_critical_branching_mean_is_centered():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1)
    recs = simulate_occupation(p, phi, 4.0, dt=0.25, seed=2, replicas=1000, L=30.0)
    vals = np.array([r.values for r in recs if not r.flagged])
    raw = np.array([r.raw for r in recs if not r.flagged])
    inside = phi.integral - expected_outside(p, phi, 30.0, recs[0].times)
    for j in (4, 8, 16):
        m, se = _mean_se(vals[:, j])
        assert abs(m) < 3 * se
        m, se = _mean_se(raw[:, j])
        assert abs(m - inside[j]) < 3 * se


def test_single_ancestor_mean_is_semigroup():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1, width=0.7)
    x0 = 1.2
    recs = simulate_occupation(p, phi, 1.0, dt=0.25, seed=3, replicas=6000, initial=[[x0]])
    raw = np.array([r.raw for r in recs])
    ev = get_evaluator(1.5, 1)
    for j, s in enumerate(recs[0].times):
        m, se = _mean_se(raw[:, j])
        target = float(ev.semigroup_apply(s, phi, x0))
        assert abs(m - target) < 3 * se + 1e-12


def test_dt_halving_consistency():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1)
    occ = []
    for dt, seed in ((0.1, 4), (0.05, 5)):
        recs = simulate_occupation(p, phi, 1.0, dt=dt, seed=seed, replicas=4000, initial=[[0.5]])
        occ.append(np.array([r.values[-1] for r in recs]))
    (m1, s1), (m2, s2) = _mean_se(occ[0]), _mean_se(occ[1])
    assert abs(m1 - m2) < 3 * math.hypot(s1, s2)


def test_records_start_at_zero_and_reproduce():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1)
    a = simulate_occupation(p, phi, 2.0, dt=0.2, seed=7, replicas=5, L=10.0)
    b = simulate_occupation(p, phi, 2.0, dt=0.2, seed=7, replicas=5, L=10.0)
    c = simulate_occupation(p, phi, 2.0, dt=0.2, seed=8, replicas=5, L=10.0)
    for r, s in zip(a, b):
        assert r.values[0] == 0.0
        assert np.array_equal(r.values, s.values)
    assert not np.array_equal(a[0].values, c[0].values)


def test_cap_flags_replicates():
    p = ModelParams(1, 1.0, 0.2)
    phi = TestFunction.bump(1)
    recs = simulate_occupation(p, phi, 20.0, dt=1.0, seed=9, replicas=200, L=5.0, cap=30)
    flagged = [r for r in recs if r.flagged]
    assert flagged, "a tiny cap with heavy-tailed offspring must trip"
    assert all(np.all(np.isnan(r.values)) for r in flagged)
    assert "cap" in flagged[0].flag
    assert len(recs) == 200


def test_emit_records_line_format():
    p = ModelParams(1, 1.5, 0.5)
    recs = simulate_occupation(p, TestFunction.bump(1), 1.0, dt=0.5, seed=1, replicas=3, L=5.0)
    buf = io.StringIO()
    emit_records(recs, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 3
    row = json.loads(lines[1])
    assert {"replicate", "seed", "flag", "times", "values"} <= set(row)
    assert row["replicate"] == 1


def test_rescaled_fluctuation_definition():
    p = ModelParams(1, 1.5, 0.5)
    T = 3.0
    rec = simulate_occupation(p, TestFunction.bump(1), T, dt=0.5, seed=1, replicas=1, L=5.0)[0]
    t, x = rescaled_fluctuation(rec, p, T)
    assert np.array_equal(x, rec.values / norming_F(T, p))
    assert t[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rescaled_fluctuation(rec, ModelParams(1, 1.5, 0.6), T)
    rec.values = np.zeros_like(rec.values)
    assert not np.any(rescaled_fluctuation(rec, p, T)[1])


def test_zero_test_function_gives_zero_solution():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1, amplitude=0.0)
    g = solve_vT(p, phi, TimeWeight(), 2.0, half_width=64, nx=1024, nt=50)
    assert not np.any(g.v)
    assert laplace_functional(g, p, phi, TimeWeight(), 2.0) == 1.0


def test_vT_invariants():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1, amplitude=3.0)
    g = solve_vT(p, phi, TimeWeight(), 4.0, half_width=128, nx=4096, nt=200)
    chk = check_vT(g)
    assert chk["in_unit_range"] and chk["dominated"] and chk["bracketing"]
    assert laplace_functional(g, p, phi, TimeWeight(), 4.0) >= 1.0


def test_vT_nonconvergence_reported():
    p = ModelParams(1, 1.5, 0.5)
    phi = TestFunction.bump(1, amplitude=3.0)
    with pytest.raises(NonConvergence) as info:
        solve_vT(p, phi, TimeWeight(), 4.0, half_width=64, nx=1024, nt=50, max_iter=2)
    assert info.value.residual > 0


@pytest.mark.parametrize("beta", [0.5, 1.0])
def test_small_phi_response_order(beta):
    # the first-order term vanishes by centering; the next term is of order eps**(1+beta)
    p = ModelParams(1, 1.5, beta)
    eps = np.logspace(-3, -1, 5)
    dev = []
    for e in eps:
        phi = TestFunction.bump(1, amplitude=e)
        g = solve_vT(p, phi, TimeWeight(), 4.0, half_width=128, nx=4096, nt=200)
        dev.append(laplace_functional(g, p, phi, TimeWeight(), 4.0) - 1.0)
    assert loglog_fit(eps, np.array(dev)).slope == pytest.approx(1 + beta, abs=0.03)


def test_vT_only_in_one_dimension():
    with pytest.raises(NotImplementedError):
        solve_vT(ModelParams(2, 1.5, 0.5), TestFunction.bump(2), TimeWeight(), 1.0)


def test_time_weight_chi():
    w = TimeWeight(0.2, 0.6, 2.0)
    assert w.chi(0.0) == pytest.approx(0.8)
    assert w.chi(0.4) == pytest.approx(0.4)
    assert w.chi(0.9) == 0.0
    with pytest.raises(ValueError):
        TimeWeight(0.5, 0.4)
