"""Query-site and batch-size selection rules.

The acquisition is the expected KL divergence between the next and current
knowledge states when a batch of ``a`` signs is taken at ``x``. It depends on
the state only through ``F(x)``, and on the surrogate only through the
accuracy ``p(x)``; it equals the mutual information (in bits) between the
side of the root and the positive count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .knowledge_state import P_HAT_MAX, KnowledgeState
from .surrogate_gp import LatentGpFit, adaptive_batch

DELTA = 1e-4
GRID_SIZE = 512
N_QUANTILE_CANDIDATES = 99
REFINE_TOL = 1e-5
LN2 = np.log(2.0)


def clip_accuracy(p):
    return np.clip(p, 0.5, P_HAT_MAX)


@dataclass(frozen=True)
class AccuracyModel:
    """Wraps a predictor ``x -> theta(x)`` and derives the clipped accuracy."""

    theta: Callable

    def theta_hat(self, x):
        return np.asarray(self.theta(np.atleast_1d(np.asarray(x, dtype=float))), dtype=float)

    def p_hat(self, x):
        th = self.theta_hat(x)
        return clip_accuracy(np.maximum(th, 1.0 - th))

    @classmethod
    def constant(cls, p: float) -> "AccuracyModel":
        return cls(lambda x: np.full(np.shape(x), p, dtype=float))


@dataclass(frozen=True)
class PolicyDecision:
    x: float
    a: int

    def __post_init__(self):
        if not 0.0 < self.x < 1.0:
            raise ValueError(f"site {self.x} outside (0, 1)")
        if self.a < 1:
            raise ValueError("batch size must be >= 1")


def expected_kl(F, p, a: int):
    """Expected KL (bits) of one batched update, vectorized over ``(F, p)`` pairs.

    ``F`` is the current CDF at the site, ``p`` the accuracy used both to
    simulate and to update: given the root left of the site,
    ``B ~ Bin(a, 1 - p)``; given it right, ``B ~ Bin(a, p)``.
    """
    F = np.atleast_1d(np.asarray(F, dtype=float))
    p = np.broadcast_to(np.asarray(p, dtype=float), F.shape)
    if a < 1:
        raise ValueError("a must be >= 1")
    b = np.arange(a + 1)
    logc = gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)
    lp = np.log(p)[:, None]
    lq = np.log1p(-p)[:, None]
    # per-B likelihoods of the two sides
    l_left = b * lq + (a - b) * lp
    l_right = b * lp + (a - b) * lq
    with np.errstate(divide="ignore"):
        lF = np.log(F)[:, None]
        l1F = np.log1p(-F)[:, None]
    joint_l = lF + l_left
    joint_r = l1F + l_right
    lmix = np.logaddexp(joint_l, joint_r)
    with np.errstate(invalid="ignore"):
        tl = np.where(np.isfinite(joint_l), np.exp(logc + joint_l) * (l_left - lmix), 0.0)
        tr = np.where(np.isfinite(joint_r), np.exp(logc + joint_r) * (l_right - lmix), 0.0)
    out = np.sum(tl + tr, axis=1) / LN2
    return np.maximum(out, 0.0)


def info_gain(state: KnowledgeState, model: AccuracyModel, x, a: int):
    """Expected KL divergence (bits) of a batch of ``a`` signs at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return expected_kl(state.cdf(x), model.p_hat(x), a)


def _candidates(state: KnowledgeState, delta: float, grid_size: int, n_quantiles: int):
    grid = np.linspace(delta, 1.0 - delta, grid_size)
    knots = state.knots[(state.knots > delta) & (state.knots < 1.0 - delta)]
    qs = np.clip(state.quantile(np.linspace(0.0, 1.0, n_quantiles + 2)[1:-1]), delta, 1.0 - delta)
    return np.unique(np.concatenate([grid, knots, qs]))


def maximize_info_gain(
    state: KnowledgeState,
    model: AccuracyModel,
    a: int,
    delta: float = DELTA,
    grid_size: int = GRID_SIZE,
    n_quantiles: int = N_QUANTILE_CANDIDATES,
    tol: float = REFINE_TOL,
    n_refine: int = 3,
) -> tuple[float, float]:
    """Coarse-to-fine global search; returns ``(argmax, max)``.

    Candidates are a uniform grid on ``[delta, 1 - delta]``, the interior
    knots, and posterior quantiles (which resolve a concentrated state far
    below the grid spacing). The best ``n_refine`` candidates are refined by
    bounded scalar search between their neighbouring candidates.
    """
    cand = _candidates(state, delta, grid_size, n_quantiles)
    vals = info_gain(state, model, cand, a)
    best_x, best_v = float(cand[np.argmax(vals)]), float(np.max(vals))
    order = np.argsort(-vals, kind="stable")[:n_refine]
    for i in order:
        lo, hi = cand[max(i - 1, 0)], cand[min(i + 1, cand.size - 1)]
        if hi - lo <= tol:
            continue
        res = minimize_scalar(
            lambda t: -float(info_gain(state, model, t, a)[0]),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": tol},
        )
        if -res.fun > best_v:
            best_x, best_v = float(res.x), float(-res.fun)
    return best_x, best_v


def sids_select(state: KnowledgeState, model: AccuracyModel, a: int, **kw) -> PolicyDecision:
    x, _ = maximize_info_gain(state, model, a, **kw)
    return PolicyDecision(x, int(a))


def rqs_select(state: KnowledgeState, rng: np.random.Generator, a: int = 1, delta: float = DELTA) -> PolicyDecision:
    """Inverse-CDF draw from the current knowledge state."""
    x = float(np.clip(state.quantile(rng.uniform()), delta, 1.0 - delta))
    return PolicyDecision(x, int(a))


def nu_schedule(n: int, scale: float = 0.1) -> float:
    """Variance threshold ``scale / n`` for the ``n``-th adaptive query."""
    return scale / max(n, 1)


def gp_model(fit: LatentGpFit) -> AccuracyModel:
    return AccuracyModel(fit.predict_theta)


def ada_sids_select(state: KnowledgeState, gp_fit: LatentGpFit, nu: float, cap: int = 1000, a0: int = 1,
                    **kw) -> PolicyDecision:
    """Site from the one-sign acquisition, batch from the look-ahead variance rule."""
    x, _ = maximize_info_gain(state, gp_model(gp_fit), 1, **kw)
    return PolicyDecision(x, adaptive_batch(gp_fit, x, nu, a0, cap))


def ada_rqs_select(state: KnowledgeState, gp_fit: LatentGpFit, nu: float, rng, cap: int = 1000,
                   a0: int = 1) -> PolicyDecision:
    x = rqs_select(state, rng).x
    return PolicyDecision(x, adaptive_batch(gp_fit, x, nu, a0, cap))


def baseline_select(kind: str, state_g: KnowledgeState, true_model: AccuracyModel, a: int,
                    rng: np.random.Generator, delta: float = DELTA) -> PolicyDecision:
    """Benchmarks that know the true accuracy: ``true_ids``, ``true_rqs``, ``unif``."""
    if kind == "true_ids":
        return sids_select(state_g, true_model, a, delta=delta)
    if kind == "true_rqs":
        return rqs_select(state_g, rng, a, delta)
    if kind == "unif":
        return PolicyDecision(float(np.clip(rng.uniform(), delta, 1.0 - delta)), int(a))
    raise ValueError(f"unknown baseline {kind!r}")


def local_pbar(B: int, a: int) -> float:
    """Empirical majority proportion at one site, clipped to ``[1/2, 1 - 1e-6]``."""
    if a < 1 or not 0 <= B <= a:
        raise ValueError("need a >= 1 and 0 <= B <= a")
    r = B / a
    return float(clip_accuracy(max(r, 1.0 - r)))


def det_ids_candidates(state: KnowledgeState, delta: float = DELTA) -> tuple[float, float]:
    """The two fixed candidates of the deterministic rule: posterior quartiles."""
    q = np.clip(state.quantile(np.array([0.25, 0.75])), delta, 1.0 - delta)
    return float(q[0]), float(q[1])


def det_ids_choice(state: KnowledgeState, sites, pbars, a: int) -> int:
    """Index of the candidate with the larger expected KL under its local accuracy."""
    gains = expected_kl(state.cdf(np.asarray(sites)), np.asarray(pbars), a)
    return int(np.argmax(gains))
