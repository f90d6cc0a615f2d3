import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bermudan_reference import exact_boundary
from spatial_pba.oracles import (
    BermudanOracle,
    BoundaryTable,
    SyntheticOracle,
    compute_boundary_table,
)

PHI_5_3 = 0.9522096477271853  # standard normal CDF at 5/3


def _se(p, a):
    return math.sqrt(p * (1 - p) / a)


@pytest.fixture(scope="module")
def exact_table():
    b = exact_boundary()
    times = np.array(sorted(t for t in b if t > 0.6 + 1e-9))
    return BoundaryTable(times, np.array([b[t] for t in times]))


def test_phi_constant():
    assert stats.norm.cdf(5 / 3) == pytest.approx(PHI_5_3, rel=1e-15)


@pytest.mark.parametrize("kind", ["linear", "exponential", "cubic"])
def test_root_is_half(kind):
    o = SyntheticOracle(kind, 1 / 3)
    assert float(o.h(1 / 3)) == 0.0
    assert float(o.true_theta(1 / 3)) == 0.5
    assert float(o.true_accuracy(1 / 3)) == 0.5


def test_linear_lln_at_root_and_edge():
    o = SyntheticOracle("linear", 1 / 3)
    rng = np.random.default_rng(0)
    a = 100_000
    r = o.query_batch(1 / 3, a, rng)
    assert abs(r.B / a - 0.5) <= 3 * _se(0.5, a)
    r = o.query_batch(0.0, a, rng)
    assert float(o.true_theta(0.0)) == pytest.approx(PHI_5_3, rel=1e-14)
    assert abs(r.B / a - PHI_5_3) <= 3 * _se(PHI_5_3, a)


def test_cubic_flat_near_root():
    o = SyntheticOracle("cubic", 0.5)
    rng = np.random.default_rng(1)
    a = 10_000
    for x in (0.48, 0.52):
        r = o.query_batch(x, a, rng)
        assert abs(r.B / a - 0.5) <= 3 * _se(0.5, a)


def test_exponential_slope_jump():
    o = SyntheticOracle("exponential", 0.4)
    eps = 1e-6
    left = (o.true_theta(0.4) - o.true_theta(0.4 - eps)) / eps
    right = (o.true_theta(0.4 + eps) - o.true_theta(0.4)) / eps
    # sigma switches from 0.2 to 1 at the root: slope ratio 5
    assert float(left / right) == pytest.approx(5.0, rel=1e-4)


def test_linear_symmetric_accuracy():
    o = SyntheticOracle("linear", 0.5)
    for d in (0.05, 0.2, 0.4):
        assert float(o.true_accuracy(0.5 - d)) == pytest.approx(float(o.true_accuracy(0.5 + d)), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["linear", "exponential", "cubic"]), st.floats(0.05, 0.95), st.floats(0.0, 1.0))
def test_accuracy_at_least_half(kind, x_star, x):
    o = SyntheticOracle(kind, x_star)
    p = float(o.true_accuracy(x))
    assert p >= 0.5
    assert float(o.sigma(x)) > 0
    if abs(x - x_star) > 1e-3:
        assert p > 0.5


def test_chi_square_goodness_of_fit():
    o = SyntheticOracle("exponential", 0.3)
    rng = np.random.default_rng(2)
    a, reps = 20, 2000
    for x in np.linspace(0.05, 0.95, 7):
        counts = np.bincount([o.query_batch(x, a, rng).B for _ in range(reps)], minlength=a + 1)
        pmf = stats.binom.pmf(np.arange(a + 1), a, float(o.true_theta(x)))
        # pool sparse cells so every expected count is at least 5
        exp_, obs_ = [], []
        e_acc = o_acc = 0.0
        for e, c in zip(pmf * reps, counts):
            e_acc += e
            o_acc += c
            if e_acc >= 5:
                exp_.append(e_acc)
                obs_.append(o_acc)
                e_acc = o_acc = 0.0
        exp_[-1] += e_acc
        obs_[-1] += o_acc
        if len(exp_) < 2:
            continue
        pval = stats.chisquare(obs_, exp_).pvalue
        assert pval > 0.01, (x, pval)


def test_seeded_determinism():
    o = SyntheticOracle("linear", 0.3)
    s1 = [o.query_batch(x, 50, np.random.default_rng(9)) for x in (0.1, 0.5)]
    s2 = [o.query_batch(x, 50, np.random.default_rng(9)) for x in (0.1, 0.5)]
    assert s1 == s2


def test_domain_violation():
    o = SyntheticOracle("linear", 0.3)
    with pytest.raises(ValueError):
        o.query_batch(1.5, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        SyntheticOracle("quartic", 0.3)


def test_boundary_table_missing_entry():
    with pytest.raises(KeyError):
        BermudanOracle(BoundaryTable(np.array([0.64]), np.array([35.0])))


def test_boundary_table_csv_roundtrip(tmp_path, exact_table):
    exact_table.to_csv(tmp_path / "b.csv")
    t = BoundaryTable.from_csv(tmp_path / "b.csv")
    np.testing.assert_array_equal(t.times, exact_table.times)
    np.testing.assert_array_equal(t.values, exact_table.values)


def test_lsm_sign_fractions(exact_table):
    o = BermudanOracle(exact_table)
    rng = np.random.default_rng(0)
    n = 10_000
    # raw timing value: immediate exercise dominates deep in the money
    raw25 = np.mean(o.pathwise_values(25.0, n * o.R, rng).reshape(n, o.R).mean(axis=1) > 0)
    assert raw25 < 0.5
    # zero immediate payoff at the strike: raw draws are never negative
    z40 = o.pathwise_values(40.0, 1000, rng)
    assert np.all(z40 >= 0)
    # normalized convention flips both
    assert o.query_batch(25.0, n, rng).B / n > 0.5
    assert o.query_batch(40.0, 1000, rng).B / 1000 < 0.5


def test_lsm_cost_and_determinism(exact_table):
    o = BermudanOracle(exact_table, R=7)
    assert o.cost_per_sign == 7
    r1 = o.query_batch(35.0, 30, np.random.default_rng(4))
    r2 = o.query_batch(35.0, 30, np.random.default_rng(4))
    assert r1 == r2


def test_lsm_reference_root(exact_table):
    o = BermudanOracle(exact_table, R=25)
    n = 10_000
    frac = o.query_batch(35.1249, n, np.random.default_rng(0)).B / n
    assert abs(frac - 0.5) <= 3 * _se(0.5, n), frac


def test_exact_boundary_at_reference_time():
    # independent dynamic-programming reference for the 0.6 boundary
    assert exact_boundary()[0.6] == pytest.approx(35.1249, abs=0.05)


def test_boundary_sweep_matches_dynamic_programming(exact_table):
    sweep = compute_boundary_table(rng=np.random.default_rng(3))
    np.testing.assert_allclose(sweep.times, exact_table.times, atol=1e-12)
    np.testing.assert_allclose(sweep.values, exact_table.values, atol=0.25)
