"""Sequential loop, initialization and Monte-Carlo campaigns.

Everything inside a run works in unit coordinates ``u`` in [0, 1]; the
oracle maps them to its own domain. Reported residuals and credible-interval
lengths are in domain units.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..knowledge_state import kl_divergence, uniform_prior
from ..oracles import BermudanOracle, BoundaryTable, SyntheticOracle, compute_boundary_table
from ..policies import (
    AccuracyModel,
    ada_rqs_select,
    ada_sids_select,
    baseline_select,
    clip_accuracy,
    det_ids_candidates,
    det_ids_choice,
    local_pbar,
    rqs_select,
    sids_select,
)
from ..surrogate_glm import fit_klr, fit_lr, fit_slr
from ..surrogate_gp import Dataset, LaplaceError, map_hyperparams
from .config import ExperimentConfig, ConfigError, LOCAL, TRUE_P

log = logging.getLogger(__name__)

THETA_GRID = np.linspace(0.0, 1.0, 201)


@dataclass(frozen=True)
class Domain:
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_unit(self, x):
        return (x - self.lo) / self.width

    def from_unit(self, u):
        return self.lo + u * self.width


class Surrogate:
    """Refittable accuracy surrogate; the GP warm-starts from its last hyperparameters."""

    def __init__(self, kind: str):
        self.kind = kind
        self.fit = None
        self.hyper = None
        self.warnings = 0

    def refit(self, data: Dataset) -> None:
        if self.kind == "bgp":
            res = map_hyperparams(data, init=self.hyper)
            self.hyper, self.fit = res.hyper, res.fit
            self.warnings += res.warning is not None
        else:
            fitter = {"lr": fit_lr, "klr": fit_klr, "slr": fit_slr}[self.kind]
            self.fit = fitter(data)
            self.warnings += not self.fit.converged

    def theta(self, u):
        return self.fit.predict_theta(u)

    @property
    def model(self) -> AccuracyModel:
        return AccuracyModel(self.theta)


@dataclass
class RunRecord:
    config_name: str
    index: int
    x_star: float
    trace: list = field(default_factory=list)
    residual: float = math.nan
    ci_length: float = math.nan
    covers: bool = False
    kl: float = math.nan
    n_sites: int = 0
    T_final: int = 0
    failed: bool = False
    error: str = ""
    surrogate_warnings: int = 0
    snapshots: list = field(default_factory=list)
    theta_curve: dict = field(default_factory=dict)
    domain: tuple = (0.0, 1.0)

    @property
    def batches(self) -> np.ndarray:
        return np.array([r["a"] for r in self.trace if r["phase"] == "loop"], dtype=int)


def crn_roots(seed: int, mc: int) -> np.ndarray:
    """Roots for macro-runs ``0..mc-1``; depend on the master seed only."""
    return np.random.default_rng(seed).uniform(size=mc)


def run_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def load_or_build_boundary(cfg: ExperimentConfig, out_dir: Path | None = None) -> BoundaryTable | None:
    oc = cfg.oracle
    if oc.synthetic:
        return None
    if oc.boundary_file:
        try:
            return BoundaryTable.from_csv(oc.boundary_file)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read boundary file {oc.boundary_file}: {exc}") from exc
    log.info("no boundary file given; running the backward boundary sweep")
    table = compute_boundary_table(
        t=oc.t, rng=np.random.default_rng(cfg.seed), strike=oc.strike, rate=oc.rate,
        vol=oc.vol, maturity=oc.maturity, dt=oc.dt, domain=oc.domain,
    )
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        table.to_csv(Path(out_dir) / "boundary.csv")
    return table


def make_oracle(cfg: ExperimentConfig, x_star: float, boundary: BoundaryTable | None):
    oc = cfg.oracle
    if oc.synthetic:
        return SyntheticOracle(oc.kind, x_star)
    return BermudanOracle(
        boundary, t=oc.t, R=oc.R, strike=oc.strike, rate=oc.rate, vol=oc.vol,
        maturity=oc.maturity, dt=oc.dt, domain=oc.domain,
    )


class _Run:
    """Mutable per-run state; the public entry point is :func:`run_gpba`."""

    def __init__(self, cfg: ExperimentConfig, x_star: float, rng, boundary):
        self.cfg = cfg
        self.rng = rng
        self.oracle = make_oracle(cfg, x_star, boundary)
        self.dom = Domain(*self.oracle.domain)
        self.cost = cfg.oracle.cost_per_sign
        self.synthetic = cfg.oracle.synthetic
        self.x_star = x_star
        self.u_star = float(self.dom.to_unit(x_star))
        self.f = uniform_prior()
        self.g = uniform_prior()
        self.T = 0
        self.n = 0
        self.data = Dataset.empty()
        self.sur = Surrogate(cfg.surrogate) if cfg.surrogate != "none" and cfg.policy not in LOCAL + TRUE_P else None
        self.record = RunRecord(cfg.name, -1, x_star, domain=(self.dom.lo, self.dom.hi))
        self._next_snapshot = 0

    def query(self, u: float, signs: int) -> int:
        self.T += signs * self.cost
        return self.oracle.query_batch(float(self.dom.from_unit(u)), signs, self.rng).B

    def true_p(self, u) -> float:
        return float(clip_accuracy(self.oracle.true_accuracy(u)))

    def p_hat(self, u, signs, B) -> float:
        if self.cfg.policy in TRUE_P:
            return self.true_p(u)
        if self.cfg.policy in LOCAL:
            return local_pbar(B, signs)
        return float(self.sur.model.p_hat(u)[0])

    def absorb(self, u, signs, B, phase):
        p = self.p_hat(u, signs, B)
        self.f = self.f.update(u, signs, B, p)
        if self.synthetic:
            self.g = self.g.update(u, signs, B, self.true_p(u))
        self.log_row(u, signs, B, p, phase)

    def log_row(self, u, signs, B, p, phase):
        f = self.f
        kl = kl_divergence(f, self.g) if self.synthetic else math.nan
        self.record.trace.append({
            "phase": phase,
            "n": self.n,
            "T": self.T,
            "x": float(self.dom.from_unit(u)),
            "a": int(signs),
            "B": int(B),
            "p_hat": p,
            "median": float(self.dom.from_unit(f.median())),
            "ci_length": float(f.ci_length(self.cfg.alpha) * self.dom.width),
            "covers": f.covers(self.cfg.alpha, self.u_star),
            "kl": kl,
        })
        snaps = self.cfg.snapshots
        while self._next_snapshot < len(snaps) and self.T >= snaps[self._next_snapshot]:
            self.record.snapshots.append((self.T, f))
            self._next_snapshot += 1

    def initialize(self):
        cfg = self.cfg
        n0 = cfg.n_init
        signs = cfg.init_batch // self.cost
        sites = np.arange(1, n0 + 1) / (n0 + 1)
        Bs = [self.query(u, signs) for u in sites]
        self.data = Dataset(sites, np.full(n0, signs), Bs)
        if self.sur is not None:
            if self.sur.kind == "bgp" and n0 < 2:
                raise ConfigError("the bgp surrogate needs at least two initial sites")
            self.sur.refit(self.data)
        # replay the clock so each initial row carries its own cumulative budget
        self.T = 0
        for u, B in zip(sites, Bs):
            self.n += 1
            self.T += signs * self.cost
            self.absorb(float(u), signs, int(B), "init")

    def select(self):
        cfg, f = self.cfg, self.f
        signs = cfg.batch // self.cost
        cap = cfg.cap // self.cost
        if cfg.policy == "sids":
            return sids_select(f, self.sur.model, signs, delta=cfg.delta)
        if cfg.policy in ("srqs", "rqs_local"):
            return rqs_select(f, self.rng, signs, cfg.delta)
        nu = cfg.nu_scale / self.n
        if cfg.policy == "ada_sids":
            return ada_sids_select(f, self.sur.fit, nu, cap, cfg.a0_nu, delta=cfg.delta)
        if cfg.policy == "ada_srqs":
            return ada_rqs_select(f, self.sur.fit, nu, self.rng, cap, cfg.a0_nu)
        true_model = AccuracyModel(lambda u: self.oracle.true_theta(u))
        return baseline_select(cfg.policy, self.g, true_model, signs, self.rng, cfg.delta)

    def step_det_ids_local(self):
        signs = self.cfg.batch // self.cost
        sites = det_ids_candidates(self.f, self.cfg.delta)
        Bs = [self.query(u, signs) for u in sites]
        pbars = [local_pbar(B, signs) for B in Bs]
        k = det_ids_choice(self.f, sites, pbars, signs)
        self.n += 1
        self.absorb(sites[k], signs, Bs[k], "loop")

    def loop(self):
        cfg = self.cfg
        while self.T < cfg.budget:
            if cfg.policy == "det_ids_local":
                self.step_det_ids_local()
                continue
            d = self.select()
            B = self.query(d.x, d.a)
            self.n += 1
            self.data = self.data.append(d.x, d.a, B)
            if self.sur is not None and (self.n - cfg.n_init) % cfg.refit_every == 0:
                self.sur.refit(self.data)
            self.absorb(d.x, d.a, B, "loop")

    def finish(self) -> RunRecord:
        r, f = self.record, self.f
        r.residual = abs(float(self.dom.from_unit(f.median())) - self.x_star)
        r.ci_length = float(f.ci_length(self.cfg.alpha) * self.dom.width)
        r.covers = f.covers(self.cfg.alpha, self.u_star)
        r.kl = kl_divergence(f, self.g) if self.synthetic else math.nan
        r.n_sites = self.n
        r.T_final = self.T
        if self.sur is not None:
            r.surrogate_warnings = self.sur.warnings
            r.theta_curve["theta_hat"] = np.asarray(self.sur.theta(THETA_GRID), dtype=float)
        r.theta_curve["u"] = THETA_GRID
        if self.synthetic:
            r.theta_curve["theta_true"] = np.asarray(self.oracle.true_theta(THETA_GRID), dtype=float)
        if not r.snapshots or r.snapshots[-1][0] != self.T:
            r.snapshots.append((self.T, f))
        return r


def run_gpba(cfg: ExperimentConfig, x_star: float, rng: np.random.Generator,
             boundary: BoundaryTable | None = None, index: int = 0) -> RunRecord:
    """One macro-run: initialization, then the sequential loop until the budget is spent.

    Surrogate and numerical failures are caught and recorded on the returned
    record (``failed``, ``error``).
    """
    run = _Run(cfg, x_star, rng, boundary)
    run.record.index = index
    try:
        run.initialize()
        run.loop()
        return run.finish()
    except (LaplaceError, np.linalg.LinAlgError, FloatingPointError, RuntimeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        log.warning("run %s/%d failed: %s", cfg.name, index, exc)
        rec = run.record
        rec.failed, rec.error = True, f"{type(exc).__name__}: {exc}"
        rec.T_final, rec.n_sites = run.T, run.n
        return rec


def roots_for(cfg: ExperimentConfig) -> np.ndarray:
    oc = cfg.oracle
    if not oc.synthetic:
        return np.full(cfg.mc, oc.reference_root)
    if oc.x_star is not None:
        return np.full(cfg.mc, oc.x_star)
    return crn_roots(cfg.seed, cfg.mc)


def _run_one(args):
    cfg, i, x_star, boundary = args
    return run_gpba(cfg, float(x_star), run_rng(cfg.seed, i), boundary, i)


@dataclass
class CampaignResult:
    config: ExperimentConfig
    records: list
    summary: dict


def summarize(cfg: ExperimentConfig, records: list) -> dict:
    ok = [r for r in records if not r.failed]
    kl = np.array([r.kl for r in ok], dtype=float)
    finite = kl[np.isfinite(kl)]

    def mean(v):
        return float(np.mean(v)) if len(v) else math.nan

    return {
        "name": cfg.name,
        "oracle": cfg.oracle.kind,
        "policy": cfg.policy,
        "surrogate": cfg.surrogate,
        "a0": cfg.init_batch,
        "budget": cfg.budget,
        "mc": cfg.mc,
        "failed": len(records) - len(ok),
        "mean_residual": mean([r.residual for r in ok]),
        "mean_ci_length": mean([r.ci_length for r in ok]),
        "coverage": mean([float(r.covers) for r in ok]),
        "mean_kl": mean(finite),
        "finite_kl_runs": int(finite.size),
        "median_sites": float(np.median([r.n_sites for r in ok])) if ok else math.nan,
        "mean_T_final": mean([r.T_final for r in ok]),
    }


def run_monte_carlo(cfg: ExperimentConfig, jobs: int = 1, boundary: BoundaryTable | None = None,
                    out_dir: Path | None = None) -> CampaignResult:
    """All macro-runs of one configuration under common random roots."""
    if boundary is None and not cfg.oracle.synthetic:
        boundary = load_or_build_boundary(cfg, out_dir)
    roots = roots_for(cfg)
    tasks = [(cfg, i, roots[i], boundary) for i in range(cfg.mc)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            records = list(ex.map(_run_one, tasks))
    else:
        records = [_run_one(t) for t in tasks]
    return CampaignResult(cfg, records, summarize(cfg, records))
