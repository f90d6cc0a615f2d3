import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from spatial_pba.oracles import SyntheticOracle
from spatial_pba.surrogate_glm import (
    GCV_GRID,
    BasisSpec,
    aic_degree,
    fit_glm,
    fit_klr,
    fit_lr,
    fit_slr,
    gcv_lambda,
    gcv_score,
    klr_basis,
    spline_basis,
    spline_knots,
    spline_penalty,
)
from spatial_pba.surrogate_gp import Dataset

X50 = np.arange(1, 51) / 51


def h1_data(seed, a=250, x_star=0.4):
    rng = np.random.default_rng(seed)
    o = SyntheticOracle("linear", x_star)
    return o, Dataset(X50, np.full(50, a), [o.query_batch(v, a, rng).B for v in X50])


def test_intercept_only_mle():
    fit = fit_glm(Dataset([0.3], [10], [7]), BasisSpec("polynomial", degree=0))
    assert fit.beta[0] == pytest.approx(math.log(0.7 / 0.3), abs=1e-10)
    assert fit.beta[0] == pytest.approx(0.8473, abs=1e-4)


def test_symmetric_data_odd_basis():
    x = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    B = np.array([90, 70, 50, 30, 10])
    fit = fit_glm(Dataset(x, np.full(5, 100), B), BasisSpec("polynomial", degree=3))
    assert float(fit.predict_theta(0.5)[0]) == pytest.approx(0.5, abs=1e-10)


def test_quintic_recovers_linear_oracle():
    o, data = h1_data(0)
    fit = fit_lr(data)
    grid = np.linspace(0.01, 0.99, 197)
    assert fit.converged
    assert np.max(np.abs(fit.predict_theta(grid) - o.true_theta(grid))) <= 0.05


def test_predictions_inside_unit_interval():
    fit = fit_glm(Dataset([0.2, 0.8], [10, 10], [10, 0]), BasisSpec("polynomial", degree=1))
    # perfect separation at lam = 0: flagged, predictions still strictly inside (0, 1)
    assert not fit.converged
    th = fit.predict_theta(np.linspace(0, 1, 11))
    assert np.all((th > 0) & (th < 1))
    zero = fit_glm(Dataset([0.2, 0.8], [10, 10], [5, 5]), BasisSpec("polynomial", degree=1))
    np.testing.assert_allclose(zero.predict_theta([0.1, 0.9]), 0.5, atol=1e-12)


def test_klr_basis_values():
    assert klr_basis(0.4, [0.4], 1.0)[0, 0] == 1.0
    assert klr_basis(1.4, [0.4], 1.0)[0, 0] == pytest.approx(math.exp(-1), rel=1e-15)
    assert klr_basis(9.0, [0.4], 0.1)[0, 0] < 1e-300


def test_klr_interpolates_high_count_site():
    rng = np.random.default_rng(3)
    x = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    a = np.array([20, 20, 5000, 20, 20])
    B = rng.binomial(a, [0.9, 0.8, 0.3, 0.4, 0.2])
    fit = fit_klr(Dataset(x, a, B))
    assert fit.converged
    p = B[2] / a[2]
    assert abs(float(fit.predict_theta(0.5)[0]) - p) <= 3 * math.sqrt(p * (1 - p) / a[2])


def test_spline_basis_below_knots():
    knots = np.array([0.2, 0.4, 0.6, 0.8])
    row = spline_basis(0.1, knots)[0]
    np.testing.assert_allclose(row, [1.0, 0.1, 0.0, 0.0])


def test_spline_continuity_and_linear_tails():
    knots = spline_knots(np.random.default_rng(4).uniform(0, 1, 40))
    h = 1e-4
    for k in knots:
        left = spline_basis(k - np.array([0, h, 2 * h]), knots)
        right = spline_basis(k + np.array([0, h, 2 * h]), knots)
        d2l = (left[0] - 2 * left[1] + left[2]) / h**2
        d2r = (right[0] - 2 * right[1] + right[2]) / h**2
        # one-sided second differences carry O(h) error times the third derivative
        assert np.max(np.abs(d2l - d2r)) <= 6 * 3 * h / np.min(np.diff(knots)) + 1e-4
        np.testing.assert_allclose(spline_basis(k - 1e-12, knots), spline_basis(k + 1e-12, knots), atol=1e-9)
    # second derivative vanishes beyond the boundary knots
    for x0 in (knots[0] - 0.05, knots[-1] + 0.05):
        v = spline_basis(x0 + np.array([-h, 0, h]), knots)
        assert np.max(np.abs(v[0] - 2 * v[1] + v[2]) / h**2) < 1e-4


def test_spline_second_derivative_continuity_central():
    knots = np.array([0.1, 0.25, 0.45, 0.7, 0.9])
    h, d = 1e-5, 1e-3

    def d2(x0):
        v = spline_basis(x0 + np.array([-h, 0, h]), knots)
        return (v[0] - 2 * v[1] + v[2]) / h**2

    for k in knots:
        # the second derivative is linear on each side, so extrapolate each side to the knot
        left = 2 * d2(k - d) - d2(k - 2 * d)
        right = 2 * d2(k + d) - d2(k + 2 * d)
        np.testing.assert_allclose(left, right, atol=1e-4 * max(1.0, np.max(np.abs(left))))


def test_spline_penalty_against_quadrature():
    knots = np.array([0.05, 0.2, 0.5, 0.6, 0.95])
    J = spline_penalty(knots)
    x = np.linspace(knots[0], knots[-1], 200_001)
    h = 1e-4
    D2 = (spline_basis(x - h, knots) - 2 * spline_basis(x, knots) + spline_basis(x + h, knots)) / h**2
    ref = np.trapezoid(D2[:, :, None] * D2[:, None, :], x, axis=0)
    np.testing.assert_allclose(J, ref, rtol=1e-4, atol=1e-4)
    np.testing.assert_allclose(J, J.T)
    assert np.all(np.linalg.eigvalsh(J) > -1e-9)


def test_gcv_noiseless_picks_small_lambda():
    # near-noiseless: counts are rounded expectations of a wiggly smooth logit
    th = expit(3 * np.sin(6 * X50))
    data = Dataset(X50, np.full(50, 1000), np.round(1000 * th).astype(int))
    basis = BasisSpec("spline", knots=spline_knots(X50))
    lam, _ = gcv_lambda(data, basis)
    assert lam <= GCV_GRID[12]


def test_gcv_pure_noise_picks_large_lambda():
    basis = BasisSpec("spline", knots=spline_knots(X50))
    for seed in range(3):
        rng = np.random.default_rng(seed)
        data = Dataset(X50, np.full(50, 100), rng.binomial(100, 0.5, 50))
        lam, _ = gcv_lambda(data, basis)
        assert lam >= GCV_GRID[12]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_gcv_finite_positive(seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, 40))
    a = rng.integers(5, 200, 40)
    data = Dataset(x, a, rng.binomial(a, rng.uniform(0.05, 0.95, 40)))
    basis = BasisSpec("spline", knots=spline_knots(data.x))
    for lam in GCV_GRID:
        s = gcv_score(fit_glm(data, basis, lam), len(data))
        assert np.isfinite(s) and s > 0


def test_slr_recovers_linear_oracle():
    o, data = h1_data(5)
    fit = fit_slr(data)
    grid = np.linspace(0.01, 0.99, 99)
    assert np.max(np.abs(fit.predict_theta(grid) - o.true_theta(grid))) <= 0.05


def test_aic_prefers_linear_logit():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        data = Dataset(X50, np.full(50, 100), rng.binomial(100, expit(2 - 4 * X50)))
        hits += aic_degree(data, 5) == 1
    assert hits >= 16
    assert aic_degree(h1_data(0)[1], 1) == 1


def test_aic_tie_goes_to_smallest_degree():
    # two sites: degree 1 already interpolates, higher degrees cannot improve the fit
    data = Dataset([0.25, 0.75], [40, 40], [30, 10])
    assert aic_degree(data, 4) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["polynomial", "kernel", "spline"]))
def test_penalized_stationarity(seed, kind):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, 30))
    a = rng.integers(20, 300, 30)
    data = Dataset(x, a, rng.binomial(a, expit(2 * np.cos(5 * x))))
    if kind == "polynomial":
        fit = fit_glm(data, BasisSpec("polynomial", degree=3))
    elif kind == "kernel":
        fit = fit_klr(data)
    else:
        fit = fit_glm(data, BasisSpec("spline", knots=spline_knots(data.x)), 1e-3)
    assert fit.converged and fit.gradient_norm <= 1e-6
    th = fit.predict_theta(np.linspace(0, 1, 51))
    assert np.all((th > 0) & (th < 1))
