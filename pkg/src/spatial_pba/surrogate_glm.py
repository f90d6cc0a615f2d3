"""Penalized logistic-regression surrogates for the positive-response probability.

Three linear-in-parameters logits are supported: monomials (LR), Gaussian
radial kernels centred at the query sites with an RKHS penalty (KLR), and a
natural cubic spline with a curvature penalty (SLR). All are fitted by
Newton/IRLS on the penalized binomial negative log-likelihood
``sum(-B eta + a log(1 + e^eta)) + lam beta^T J beta / 2``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, xlogy

from .surrogate_gp import Dataset

# logits are clipped here so predictions stay strictly inside (0, 1)
ETA_MAX = 30.0
GCV_GRID = np.logspace(-6, 2, 25)
MAX_SPLINE_KNOTS = 30


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Basis functions of the logit and the matching penalty.

    ``kind`` is ``"polynomial"`` (uses ``degree``), ``"kernel"`` (uses
    ``centers`` and ``scale``) or ``"spline"`` (uses ``knots``).
    """

    kind: str
    degree: int = 5
    centers: np.ndarray | None = None
    scale: float = 1.0
    knots: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "polynomial":
            if self.degree < 0:
                raise ValueError("degree must be >= 0")
        elif self.kind == "kernel":
            if self.centers is None or self.scale <= 0:
                raise ValueError("kernel basis needs centers and a positive scale")
            object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))
        elif self.kind == "spline":
            k = np.asarray(self.knots, dtype=float)
            if k.size < 2 or np.any(np.diff(k) <= 0):
                raise ValueError("spline knots must be strictly increasing, at least two")
            object.__setattr__(self, "knots", k)
        else:
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @property
    def penalty(self) -> str:
        return {"polynomial": "none", "kernel": "rkhs_norm", "spline": "curvature"}[self.kind]

    def design(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "polynomial":
            return poly_basis(x, self.degree)
        if self.kind == "kernel":
            return klr_basis(x, self.centers, self.scale)
        return spline_basis(x, self.knots)

    def penalty_matrix(self) -> np.ndarray:
        if self.kind == "polynomial":
            return np.zeros((self.degree + 1, self.degree + 1))
        if self.kind == "kernel":
            return klr_basis(self.centers, self.centers, self.scale)
        return spline_penalty(self.knots)


def poly_basis(x, degree: int) -> np.ndarray:
    """Monomials ``z^0 .. z^degree`` of ``z = 2x - 1`` (standardized to [-1, 1])."""
    z = 2.0 * np.atleast_1d(np.asarray(x, dtype=float)) - 1.0
    return np.vander(z, degree + 1, increasing=True)


def klr_basis(x, centers, scale: float) -> np.ndarray:
    """Gaussian radial features ``exp(-|x - c|^2 / scale^2)``."""
    d = np.subtract.outer(np.atleast_1d(np.asarray(x, dtype=float)), np.asarray(centers, dtype=float))
    return np.exp(-(d / scale) ** 2)


def _spline_d(x, knots, k):
    K = knots[-1]
    return (np.maximum(x - knots[k], 0.0) ** 3 - np.maximum(x - K, 0.0) ** 3) / (K - knots[k])


def spline_basis(x, knots) -> np.ndarray:
    """Natural cubic spline basis ``1, x, d_k - d_{K-1}`` for ``k = 1..K-2``.

    ``d_k(x) = ((x - xi_k)_+^3 - (x - xi_K)_+^3) / (xi_K - xi_k)``; every
    column is linear beyond the boundary knots.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    knots = np.asarray(knots, dtype=float)
    nk = knots.size
    cols = [np.ones_like(x), x]
    if nk > 2:
        last = _spline_d(x, knots, nk - 2)
        cols += [_spline_d(x, knots, k) - last for k in range(nk - 2)]
    return np.column_stack(cols)


def _spline_second_derivative(x, knots):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nk = knots.size
    out = np.zeros((x.size, nk))
    if nk <= 2:
        return out

    def dd(k):
        K = knots[-1]
        return 6.0 * (np.maximum(x - knots[k], 0.0) - np.maximum(x - K, 0.0)) / (K - knots[k])

    last = dd(nk - 2)
    for k in range(nk - 2):
        out[:, k + 2] = dd(k) - last
    return out


def spline_penalty(knots) -> np.ndarray:
    """``J[i, j] = integral of N_i'' N_j''``; exact because every ``N''`` is
    piecewise linear between knots and Simpson's rule integrates their
    products exactly."""
    knots = np.asarray(knots, dtype=float)
    a, b = knots[:-1], knots[1:]
    pts = np.concatenate([a, 0.5 * (a + b), b])
    D = _spline_second_derivative(pts, knots)
    m = a.size
    Da, Dm, Db = D[:m], D[m : 2 * m], D[2 * m :]
    h = (b - a)[:, None, None]
    prods = (
        Da[:, :, None] * Da[:, None, :]
        + 4.0 * Dm[:, :, None] * Dm[:, None, :]
        + Db[:, :, None] * Db[:, None, :]
    )
    return np.sum(h / 6.0 * prods, axis=0)


def spline_knots(x, max_knots: int = MAX_SPLINE_KNOTS) -> np.ndarray:
    """``min(n, max_knots)`` knots at equally spaced empirical quantiles of ``x``."""
    x = np.unique(np.asarray(x, dtype=float))
    k = min(x.size, max_knots)
    return np.unique(np.quantile(x, np.linspace(0.0, 1.0, k)))


@dataclass(frozen=True, eq=False)
class GlmFit:
    basis: BasisSpec
    beta: np.ndarray
    lam: float
    J: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool
    hat_trace: float = field(default=float("nan"))
    deviance: float = field(default=float("nan"))

    def predict_theta(self, x):
        eta = np.clip(self.basis.design(x) @ self.beta, -ETA_MAX, ETA_MAX)
        return expit(eta)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "beta", "lambda", "basis"])
            for i, b in enumerate(self.beta):
                w.writerow([i, repr(float(b)), repr(float(self.lam)), self.basis.kind])


def predict_theta_glm(fit: GlmFit, x):
    return fit.predict_theta(x)


def _objective(eta, beta, a, B, lam, J):
    return float(np.sum(-B * eta + a * np.logaddexp(0.0, eta)) + 0.5 * lam * beta @ J @ beta)


def binomial_deviance(a, B, theta) -> float:
    a, B = np.asarray(a, dtype=float), np.asarray(B, dtype=float)
    theta = np.clip(theta, expit(-ETA_MAX), expit(ETA_MAX))
    return float(2.0 * np.sum(
        xlogy(B, B) - xlogy(B, a * theta) + xlogy(a - B, a - B) - xlogy(a - B, a * (1.0 - theta))
    ))


def fit_glm(
    data: Dataset,
    basis: BasisSpec,
    lam: float = 0.0,
    tol: float = 1e-6,
    max_iter: int = 100,
    beta0=None,
) -> GlmFit:
    """Penalized IRLS with step-halving (up to 20 halvings per step).

    ``converged`` requires a gradient max-norm of at most ``tol`` and a
    negligible Newton step; it is False under perfect separation with
    ``lam = 0``, where the coefficients diverge.
    """
    if lam < 0:
        raise ValueError("penalty weight must be >= 0")
    Phi = basis.design(data.x)
    J = basis.penalty_matrix()
    a, B = data.a.astype(float), data.B.astype(float)
    p = Phi.shape[1]
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    eta = Phi @ beta
    obj = _objective(eta, beta, a, B, lam, J)
    kernel = basis.kind == "kernel"
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        th = expit(eta)
        r = a * th - B
        grad = Phi.T @ r + lam * (J @ beta)
        gnorm = float(np.max(np.abs(grad)))
        w = a * th * (1.0 - th)
        if kernel:
            # Phi = J is symmetric: H = Phi (W Phi + lam I), grad = Phi (r + lam beta)
            M = w[:, None] * Phi + lam * np.eye(p)
            step = -_solve(M, r + lam * beta)
        else:
            H = Phi.T @ (w[:, None] * Phi) + lam * J
            step = -_solve(H, grad)
        # a small gradient alone is not enough: under separation it decays like e^-eta
        # while the Newton step in the logits stays of order one
        if gnorm <= tol and np.max(np.abs(Phi @ step)) <= 1e-8:
            converged = True
            it -= 1
            break
        accepted = False
        for _ in range(21):
            nb = beta + step
            ne = Phi @ nb
            nobj = _objective(ne, nb, a, B, lam, J)
            if nobj <= obj + 1e-12 * max(1.0, abs(obj)):
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            converged = gnorm <= tol
            break
        beta, eta, obj = nb, ne, nobj
    th = expit(eta)
    grad = Phi.T @ (a * th - B) + lam * (J @ beta)
    gnorm = float(np.max(np.abs(grad)))
    w = a * th * (1.0 - th)
    H = Phi.T @ (w[:, None] * Phi) + lam * J
    try:
        # tr of W^1/2 Phi H^-1 Phi^T W^1/2
        tr = float(np.trace(_solve(H, Phi.T @ (w[:, None] * Phi))))
    except np.linalg.LinAlgError:
        tr = float("nan")
    return GlmFit(basis, beta, lam, J, obj, gnorm, it, converged and gnorm <= tol, tr, binomial_deviance(a, B, th))


def _solve(M, v):
    try:
        return np.linalg.solve(M, v)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, v, rcond=None)[0]


def gcv_score(fit: GlmFit, n: int) -> float:
    return n * fit.deviance / (n - fit.hat_trace) ** 2


def gcv_lambda(data: Dataset, basis: BasisSpec, grid=GCV_GRID) -> tuple[float, GlmFit]:
    """Penalty weight minimizing ``n Dev / (n - tr H)^2`` over ``grid``."""
    n = len(data)
    best = None
    beta0 = None
    for lam in sorted(grid, reverse=True):
        fit = fit_glm(data, basis, lam, beta0=beta0)
        beta0 = fit.beta
        score = gcv_score(fit, n)
        if not np.isfinite(score):
            continue
        if best is None or score < best[0]:
            best = (score, lam, fit)
    if best is None:
        raise RuntimeError("GCV undefined for every penalty weight on the grid")
    return best[1], best[2]


def aic_degree(data: Dataset, max_degree: int = 5) -> int:
    """Polynomial degree minimizing ``-2 loglik + 2 (degree + 1)``; ties go to the smaller degree."""
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    a, B = data.a.astype(float), data.B.astype(float)
    best_deg, best_aic = 1, np.inf
    for d in range(1, max_degree + 1):
        fit = fit_glm(data, BasisSpec("polynomial", degree=d))
        eta = poly_basis(data.x, d) @ fit.beta
        loglik = float(np.sum(B * eta - a * np.logaddexp(0.0, eta)))
        aic = -2.0 * loglik + 2.0 * (d + 1)
        if aic < best_aic - 1e-9:
            best_deg, best_aic = d, aic
    return best_deg


def fit_lr(data: Dataset, degree: int = 5) -> GlmFit:
    return fit_glm(data, BasisSpec("polynomial", degree=degree), 0.0)


def fit_klr(data: Dataset, scale: float = 1.0, lam: float = 0.01) -> GlmFit:
    return fit_glm(data, BasisSpec("kernel", centers=data.x, scale=scale), lam)


def fit_slr(data: Dataset, grid=GCV_GRID) -> GlmFit:
    basis = BasisSpec("spline", knots=spline_knots(data.x))
    return gcv_lambda(data, basis, grid)[1]
