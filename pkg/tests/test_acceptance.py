"""Acceptance suite: one test per criterion, each recording a pass/fail line
that is repeated in the terminal summary."""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit

from acceptance_log import record_criterion
from gp_reference import dense_oracle, random_dataset, trapezoid_theta
from mc_reference import mc_expected_kl
from spatial_pba.harness.cli import main as cli_main
from spatial_pba.harness.config import load_config
from spatial_pba.harness.outputs import read_metrics_csv
from spatial_pba.harness.runner import crn_roots, run_gpba, run_monte_carlo, run_rng
from spatial_pba.knowledge_state import kl_divergence, uniform_prior
from spatial_pba.oracles import SyntheticOracle
from spatial_pba.policies import AccuracyModel, info_gain, maximize_info_gain
from spatial_pba.surrogate_gp import (
    Dataset,
    MaternHyper,
    gauss_hermite_theta,
    laplace_fit,
    latent_variance,
    map_hyperparams,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def check(number, title, ok, detail):
    record_criterion(number, title, bool(ok), detail)
    assert ok, detail


def random_state(rng, k=None):
    f = uniform_prior()
    for _ in range(int(rng.integers(1, 8)) if k is None else k):
        a = int(rng.integers(1, 30))
        f = f.update(float(rng.uniform(0.01, 0.99)), a, int(rng.integers(0, a + 1)), float(rng.uniform(0.5, 0.95)))
    return f


def test_criterion_01_property_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = dict(norm=0.0, compose=0.0, order=0.0, half=0.0, roundtrip=0.0, self_kl=0.0)
    min_kl = math.inf
    for _ in range(100):
        f = random_state(rng)
        g = random_state(rng)
        worst["norm"] = max(worst["norm"], abs(f.total_mass() - 1.0))
        x, p = float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.55, 0.95))
        a1, a2 = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        b1, b2 = int(rng.integers(0, a1 + 1)), int(rng.integers(0, a2 + 1))
        two = f.update(x, a1, b1, p).update(x, a2, b2, p)
        one = f.update(x, a1 + a2, b1 + b2, p)
        worst["compose"] = max(worst["compose"], np.max(np.abs(two.densities - one.densities)))
        y = float(rng.uniform(0.05, 0.95))
        ab = f.update(x, a1, b1, p).update(y, a2, b2, p)
        ba = f.update(y, a2, b2, p).update(x, a1, b1, p)
        worst["order"] = max(worst["order"], np.max(np.abs(ab.densities - ba.densities)))
        half = f.update(x, a1, b1, 0.5)
        worst["half"] = max(worst["half"], np.max(np.abs(half.density(f.knots[:-1]) - f.densities)))
        q = rng.uniform(0.001, 0.999, 20)
        worst["roundtrip"] = max(worst["roundtrip"], np.max(np.abs(f.cdf(f.quantile(q)) - q)))
        worst["self_kl"] = max(worst["self_kl"], abs(kl_divergence(f, f)))
        min_kl = min(min_kl, kl_divergence(f, g))
    elapsed = time.perf_counter() - t0
    ok = (worst["norm"] <= 1e-12 and worst["compose"] <= 1e-12 and worst["order"] <= 1e-12
          and worst["half"] <= 1e-12 and worst["roundtrip"] <= 1e-9 and worst["self_kl"] == 0.0
          and min_kl >= 0.0 and elapsed < 60)
    detail = ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f", min KL={min_kl:.3g}, {elapsed:.1f}s"
    check(1, "knowledge-state properties", ok, detail)


def test_criterion_02_closed_form_matches_simulation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    f = uniform_prior()
    worst_z = 0.0
    for a in (1, 5, 25):
        for p in (0.55, 0.7, 0.9):
            for x in (0.2, 0.5, 0.8):
                exact = info_gain(f, AccuracyModel.constant(p), x, a)[0]
                mean, se = mc_expected_kl(f, x, a, p, 100_000, rng)
                # a=1 at x=1/2: both outcomes carry the same KL, so the sample spread
                # is pure round-off; floor the standard error at double precision
                worst_z = max(worst_z, abs(exact - mean) / max(se, 1e-12))
    elapsed = time.perf_counter() - t0
    check(2, "expected KL vs brute-force simulation", worst_z <= 3.0 and elapsed <= 120,
          f"worst |z|={worst_z:.2f} over 27 cases, {elapsed:.1f}s")


def test_criterion_03_constant_accuracy_capacity():
    worst_v = worst_x = 0.0
    for p in (0.6, 0.8, 0.95):
        x, v = maximize_info_gain(uniform_prior(), AccuracyModel.constant(p), 1)
        cap = 1 + p * math.log2(p) + (1 - p) * math.log2(1 - p)
        worst_v = max(worst_v, abs(v - cap))
        worst_x = max(worst_x, abs(x - 0.5))
    check(3, "capacity under constant accuracy", worst_v <= 1e-6 and worst_x <= 1e-3,
          f"max |gain - capacity|={worst_v:.1e}, max |argmax - 1/2|={worst_x:.1e}")


def test_criterion_04_laplace_correctness():
    rng = np.random.default_rng(0)
    data = random_dataset(rng, 10)
    fit = laplace_fit(data, MaternHyper(2.0, 0.3), jitter=0.0)
    grad_err = 0.0
    for _ in range(3):
        phi = fit.mode + rng.normal(0, 0.5, 10)
        g = fit.score_gradient(phi)
        h = 1e-5
        fd = np.array([(fit.score(phi + h * e) - fit.score(phi - h * e)) / (2 * h) for e in np.eye(10)])
        grad_err = max(grad_err, np.max(np.abs(fd - g)) / np.max(np.abs(g)))
    stationarity = 0.0
    for seed in range(10):
        r = np.random.default_rng(100 + seed)
        d = random_dataset(r, int(r.integers(1, 40)), a_max=1000)
        stationarity = max(stationarity, laplace_fit(d, MaternHyper(r.uniform(0.1, 4), r.uniform(0.05, 1.5))).gradient_norm)
    dense_err = 0.0
    xs = np.array([0.05, 0.33, 0.71, 0.99])
    for n in range(1, 6):
        d = random_dataset(np.random.default_rng(n), n)
        hyper = MaternHyper(1.7, 0.25)
        f = laplace_fit(d, hyper, jitter=0.0)
        mean, var = f.predict_latent(xs)
        dm, dv = dense_oracle(hyper, d, f.mode, f.w_hat, xs)
        dense_err = max(dense_err, np.max(np.abs(var - dv) / dv), np.max(np.abs(mean - dm) / np.maximum(np.abs(dm), 1e-12)))
    check(4, "Laplace gradient, stationarity and dense oracle",
          grad_err <= 1e-5 and stationarity <= 1e-8 and dense_err <= 1e-10,
          f"gradient rel err={grad_err:.1e}, stationarity={stationarity:.1e}, dense rel err={dense_err:.1e}")


def test_criterion_05_lookahead_variance():
    rng = np.random.default_rng(8)
    hyper = MaternHyper(1.2, 0.25)
    exact_err = 0.0
    for _ in range(20):
        data = random_dataset(rng, int(rng.integers(3, 15)))
        x_new = float(rng.uniform(0, 1))
        a_new = int(rng.integers(1, 500))
        b_new = int(rng.binomial(a_new, 0.5))
        full = laplace_fit(data.append(x_new, a_new, b_new), hyper, jitter=0.0)
        refit = full.predict_latent([x_new])[1][0]
        i = int(np.flatnonzero(full.data.x == x_new)[0])
        keep = np.arange(full.data.x.size) != i
        s2 = latent_variance(hyper, full.data.x[keep], full.w_hat[keep], [x_new])[0]
        exact_err = max(exact_err, abs(1.0 / (1.0 / s2 + full.w_hat[i]) - refit) / refit)

    rng = np.random.default_rng(9)
    oracle = SyntheticOracle("linear", 0.45)
    x = np.arange(1, 21) / 21
    data = Dataset(x, np.full(20, 250), [oracle.query_batch(v, 250, rng).B for v in x])
    res = map_hyperparams(data)
    approx_err = 0.0
    for x_new in np.linspace(0.07, 0.93, 10):
        b_new = oracle.query_batch(x_new, 250, rng).B
        approx = res.fit.lookahead_variance(x_new, 250)[0]
        refit = laplace_fit(data.append(x_new, 250, b_new), res.hyper).predict_latent([x_new])[1][0]
        approx_err = max(approx_err, abs(approx - refit) / refit)
    check(5, "look-ahead variance", exact_err <= 1e-6 and approx_err <= 0.25,
          f"exact identity rel err={exact_err:.1e}, plug-in approximation rel err={approx_err:.3f}")


def test_criterion_06_quadrature():
    worst = 0.0
    for m in np.linspace(-5, 5, 21):
        for s in np.linspace(0.1, 3.0, 30):
            worst = max(worst, abs(gauss_hermite_theta(m, s) - trapezoid_theta(m, s)))
    check(6, "Gauss-Hermite logistic-normal mean", worst <= 1e-6, f"max abs err={worst:.1e} over 630 (m, s) pairs")


@pytest.fixture(scope="module")
def h1_sids_lr():
    t0 = time.perf_counter()
    res = run_monte_carlo(load_config(CONFIGS / "h1_sids_lr.json"))
    return res, time.perf_counter() - t0


def test_criterion_07_h1_desk_scale(h1_sids_lr):
    res, elapsed = h1_sids_lr
    s = res.summary
    ok = (s["failed"] == 0 and s["mean_residual"] <= 0.005 and s["coverage"] >= 0.80
          and 0.004 <= s["mean_ci_length"] <= 0.03 and s["mean_kl"] <= 2.0 and elapsed <= 900)
    check(7, "linear test function, sIDS + LR, a=250", ok,
          f"residual={s['mean_residual']:.5f}, coverage={s['coverage']:.2f}, CI={s['mean_ci_length']:.4f}, "
          f"KL={s['mean_kl']:.3f} ({s['finite_kl_runs']} finite), failed={s['failed']}, {elapsed:.0f}s")


def test_criterion_08_local_vs_spatial(h1_sids_lr):
    spatial = h1_sids_lr[0].summary
    local = run_monte_carlo(load_config(CONFIGS / "h1_det_ids_local.json")).summary
    ratio = local["mean_kl"] / spatial["mean_kl"]
    ok = ratio >= 5 and local["coverage"] <= 0.3 and spatial["coverage"] >= 0.8
    check(8, "local-accuracy Det-IDS vs spatial sIDS + LR", ok,
          f"KL local={local['mean_kl']:.3f} spatial={spatial['mean_kl']:.3f} (ratio {ratio:.1f}), "
          f"coverage local={local['coverage']:.2f} spatial={spatial['coverage']:.2f}")


def test_criterion_09_h3_desk_scale():
    s = run_monte_carlo(load_config(CONFIGS / "h3_sids_lr.json")).summary
    ok = s["failed"] == 0 and s["mean_residual"] <= 0.08 and s["coverage"] >= 0.5
    check(9, "cubic test function, sIDS + LR, a=100", ok,
          f"residual={s['mean_residual']:.4f}, coverage={s['coverage']:.2f}, CI={s['mean_ci_length']:.4f}, "
          f"failed={s['failed']}")


@pytest.mark.slow
def test_criterion_10_bermudan(tmp_path):
    t0 = time.perf_counter()
    assert cli_main(["boundary", "--config", str(CONFIGS / "bermudan_ada_sids_bgp.json"),
                     "--out", str(tmp_path / "boundary")]) == 0
    code = cli_main(["run", "--config", str(CONFIGS / "bermudan_ada_sids_bgp.json"),
                     "--boundary", str(tmp_path / "boundary" / "boundary.csv"),
                     "--out", str(tmp_path / "run"), "--no-traces", "--no-plots"])
    row = read_metrics_csv(tmp_path / "run" / "metrics.csv")[0]
    residual = float(row["mean_residual"])
    ok = code == 0 and residual <= 0.6
    check(10, "Bermudan put boundary, Ada-sIDS + B-GP", ok,
          f"mean |median - 35.1249|={residual:.4f}, coverage={float(row['coverage']):.2f}, "
          f"CI={float(row['mean_ci_length']):.3f}, median sites={row['median_sites']}, "
          f"failed={row['failed']}, {time.perf_counter() - t0:.0f}s")


def test_criterion_11_adaptive_batching():
    cfg = load_config(CONFIGS / "h1_ada_sids_bgp.json")
    half = cfg.budget / 2
    roots = crn_roots(cfg.seed, 5)
    first, second, floor_hits = [], [], []
    for i in range(5):
        rec = run_gpba(cfg, float(roots[i]), run_rng(cfg.seed, i), index=i)
        assert not rec.failed, rec.error
        loop = [r for r in rec.trace if r["phase"] == "loop"]
        spent_before = np.array([r["T"] - r["a"] for r in loop])
        a = np.array([r["a"] for r in loop])
        first.append(a[spent_before <= half])
        second.append(a[spent_before > half])
        floor_hits.append(int(np.sum(a[spent_before > half] == cfg.a0_nu)))
    m1 = float(np.median(np.concatenate(first)))
    m2 = float(np.median(np.concatenate(second)))
    ok = m2 < m1 and all(h >= 1 for h in floor_hits)
    check(11, "adaptive batch sizes on the linear test function", ok,
          f"median batch before T/2={m1:g}, after T/2={m2:g} (decrease required); "
          f"floor hits after T/2 per run={floor_hits}")
