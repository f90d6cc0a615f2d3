"""Piecewise-constant knowledge state for the root location on [0, 1].

The density is stored as log-values on the intervals ``[knots[j], knots[j+1])``.
Every query site becomes a knot, so the batched sign update is exact: no
binning error is ever introduced.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

P_HAT_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class UpdateInput:
    """Arguments of one batched sign update."""

    x: float
    a: int
    B: int
    p_hat: float

    def __post_init__(self):
        if not 0.0 < self.x < 1.0:
            raise ValueError(f"query site must lie in (0, 1), got {self.x}")
        if self.a < 1:
            raise ValueError(f"replicate count must be >= 1, got {self.a}")
        if not 0 <= self.B <= self.a:
            raise ValueError(f"positive count B={self.B} outside [0, {self.a}]")
        if not 0.5 <= self.p_hat < 1.0:
            raise ValueError(
                f"p_hat={self.p_hat} outside [1/2, 1); clip to [0.5, {P_HAT_MAX}] first"
            )


@dataclass(frozen=True, eq=False)
class KnowledgeState:
    """Posterior density of the root, constant between consecutive knots.

    Attributes
    ----------
    knots : ndarray, shape (m + 1,)
        Strictly increasing breakpoints with ``knots[0] == 0`` and
        ``knots[-1] == 1``.
    log_weights : ndarray, shape (m,)
        Normalized log-density on each interval.
    """

    knots: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        lw = np.asarray(self.log_weights, dtype=float)
        if knots.ndim != 1 or knots.size < 2 or lw.shape != (knots.size - 1,):
            raise ValueError("need m+1 knots and m log-weights")
        if knots[0] != 0.0 or knots[-1] != 1.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must increase strictly from 0 to 1")
        knots.setflags(write=False)
        lw.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "log_weights", lw)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def densities(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def masses(self) -> np.ndarray:
        return np.exp(self.log_weights + np.log(self.widths))

    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def _cum_masses(self) -> np.ndarray:
        return np.concatenate(([0.0], np.cumsum(self.masses)))

    def density(self, x):
        """Density value at ``x`` (right-continuous; the last interval includes 1)."""
        x = np.asarray(x, dtype=float)
        j = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, self.log_weights.size - 1)
        return np.exp(self.log_weights[j])

    def update(self, x: float, a: int, B: int, p_hat: float) -> "KnowledgeState":
        """Batched sign update at site ``x`` with ``B`` positives out of ``a``.

        Mass to the right of ``x`` is multiplied by ``p^B (1-p)^(a-B)``, mass at
        or left of ``x`` by ``(1-p)^B p^(a-B)``; the result is renormalized.
        """
        UpdateInput(x, a, B, p_hat)
        knots, lw = self.knots, self.log_weights
        k = int(np.searchsorted(knots, x))
        if knots[k] != x:
            knots = np.insert(knots, k, x)
            lw = np.insert(lw, k - 1, lw[k - 1])
        lp, lq = math.log(p_hat), math.log1p(-p_hat)
        right = B * lp + (a - B) * lq
        left = B * lq + (a - B) * lp
        # intervals [knots[j], knots[j+1]) with j < k lie at or left of x
        shift = np.where(np.arange(lw.size) < k, left, right)
        lw = lw + shift
        return _normalized(knots, lw)

    def cdf(self, x):
        """Exact piecewise-linear CDF."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        cum = self._cum_masses()
        j = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, self.log_weights.size - 1)
        out = cum[j] + np.exp(self.log_weights[j]) * (x - self.knots[j])
        return np.minimum(out, 1.0)

    def quantile(self, q):
        """Smallest ``x`` with ``cdf(x) >= q``, by linear interpolation."""
        q = np.asarray(q, dtype=float)
        cum = self._cum_masses()
        qq = np.clip(q, 0.0, cum[-1])
        j = np.clip(np.searchsorted(cum, qq, side="left"), 1, self.log_weights.size)
        mass = cum[j] - cum[j - 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(mass > 0, (qq - cum[j - 1]) / mass, 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        x = self.knots[j - 1] + frac * (self.knots[j] - self.knots[j - 1])
        x = np.where(qq <= 0.0, 0.0, x)
        return x if x.ndim else float(x)

    def median(self) -> float:
        return self.quantile(0.5)

    def credible_interval(self, alpha: float = 0.05) -> tuple[float, float]:
        return self.quantile(alpha / 2), self.quantile(1 - alpha / 2)

    def ci_length(self, alpha: float = 0.05) -> float:
        lo, hi = self.credible_interval(alpha)
        return hi - lo

    def covers(self, alpha: float, x_star: float) -> bool:
        lo, hi = self.credible_interval(alpha)
        return bool(lo <= x_star <= hi)

    def refine(self, knots) -> "KnowledgeState":
        """Same density expressed on the union of its knots and ``knots``."""
        merged = np.union1d(self.knots, np.clip(np.asarray(knots, dtype=float), 0.0, 1.0))
        j = np.searchsorted(self.knots, merged[:-1], side="right") - 1
        return KnowledgeState(merged, self.log_weights[j])

    def to_csv(self, path) -> None:
        """Write ``knot,density`` rows; the last row repeats the final density."""
        dens = self.densities
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["knot", "density"])
            for k, d in zip(self.knots, np.append(dens, dens[-1])):
                w.writerow([repr(float(k)), repr(float(d))])

    @classmethod
    def from_csv(cls, path) -> "KnowledgeState":
        rows = list(csv.DictReader(Path(path).open()))
        knots = np.array([float(r["knot"]) for r in rows])
        dens = np.array([float(r["density"]) for r in rows[:-1]])
        with np.errstate(divide="ignore"):
            return _normalized(knots, np.log(dens))


def _normalized(knots, log_weights) -> KnowledgeState:
    log_mass = logsumexp(log_weights + np.log(np.diff(knots)))
    return KnowledgeState(knots, log_weights - log_mass)


def uniform_prior() -> KnowledgeState:
    return KnowledgeState(np.array([0.0, 1.0]), np.array([0.0]))


def from_density(knots, densities) -> KnowledgeState:
    """Build a normalized state from unnormalized interval densities."""
    with np.errstate(divide="ignore"):
        return _normalized(np.asarray(knots, dtype=float), np.log(np.asarray(densities, dtype=float)))


def kl_divergence(f: KnowledgeState, g: KnowledgeState, base: float = 2.0) -> float:
    """KL divergence D(f; g) of two piecewise-constant densities.

    Both states are refined to the union of their knots. Terms with zero
    ``f``-density contribute 0; a region where ``f`` has positive density but
    ``g`` is exactly zero makes the divergence ``inf``. Zero is judged on the
    log-weights, so densities that merely underflow when exponentiated still
    give a finite value.

    Parameters
    ----------
    base : float
        Logarithm base; 2 gives bits, ``math.e`` gives nats.
    """
    knots = np.union1d(f.knots, g.knots)
    f, g = f.refine(knots), g.refine(knots)
    lf, lg = f.log_weights, g.log_weights
    width = np.diff(knots)
    live = np.isfinite(lf)
    if np.any(live & ~np.isfinite(lg)):
        return math.inf
    with np.errstate(invalid="ignore"):
        terms = np.where(live, np.exp(lf) * width * (lf - np.where(live, lg, 0.0)), 0.0)
    return float(np.sum(terms) / math.log(base))
