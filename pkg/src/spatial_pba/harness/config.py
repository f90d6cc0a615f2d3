"""Declarative experiment configuration, read from JSON.

All budgets (``budget``, ``init_budget``, ``init_batch``, ``batch``, ``cap``)
are counted in underlying oracle evaluations. For the Bermudan oracle one
sign costs ``R`` evaluations, so a batch of ``a`` evaluations is ``a / R``
signs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

SURROGATES = ("bgp", "klr", "slr", "lr", "none")
POLICIES = (
    "sids", "srqs", "ada_sids", "ada_srqs",
    "det_ids_local", "rqs_local",
    "true_ids", "true_rqs", "unif",
)
ADAPTIVE = ("ada_sids", "ada_srqs")
LOCAL = ("det_ids_local", "rqs_local")
TRUE_P = ("true_ids", "true_rqs", "unif")
ORACLES = ("linear", "exponential", "cubic", "bermudan")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    kind: str = "linear"
    # None draws the root per macro-run from the master seed (synthetic only)
    x_star: float | None = None
    t: float = 0.6
    R: int = 25
    strike: float = 40.0
    rate: float = 0.06
    vol: float = 0.2
    maturity: float = 1.0
    dt: float = 0.04
    domain: tuple[float, float] = (25.0, 40.0)
    boundary_file: str | None = None
    reference_root: float = 35.1249

    def __post_init__(self):
        if self.kind not in ORACLES:
            raise ConfigError(f"oracle.kind must be one of {ORACLES}, got {self.kind!r}")
        if self.x_star is not None and self.kind != "bermudan" and not 0 < self.x_star < 1:
            raise ConfigError("oracle.x_star must lie in (0, 1)")
        if self.R < 1:
            raise ConfigError("oracle.R must be >= 1")
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))

    @property
    def cost_per_sign(self) -> int:
        return self.R if self.kind == "bermudan" else 1

    @property
    def synthetic(self) -> bool:
        return self.kind != "bermudan"


@dataclass(frozen=True)
class ExperimentConfig:
    """One cell of a results table: oracle, surrogate, policy and budgets."""

    name: str = "experiment"
    oracle: OracleConfig = field(default_factory=OracleConfig)
    surrogate: str = "lr"
    policy: str = "sids"
    budget: int = 20_000
    init_budget: int = 5_000
    init_batch: int = 250
    batch: int | None = None
    nu_scale: float = 0.1
    cap: int = 1000
    a0_nu: int = 1
    refit_every: int = 1
    mc: int = 20
    seed: int = 0
    alpha: float = 0.05
    delta: float = 1e-4
    # budgets at which the knowledge state is kept for plotting; None means
    # end of initialization, half budget and full budget
    snapshots: tuple[int, ...] | None = None

    def __post_init__(self):
        if isinstance(self.oracle, dict):
            object.__setattr__(self, "oracle", _build(OracleConfig, self.oracle, "oracle"))
        snaps = (self.init_budget, self.budget // 2, self.budget) if self.snapshots is None else self.snapshots
        object.__setattr__(self, "snapshots", tuple(sorted({int(s) for s in snaps})))
        if self.batch is None:
            object.__setattr__(self, "batch", self.init_batch)
        c = self.oracle.cost_per_sign
        if self.surrogate not in SURROGATES:
            raise ConfigError(f"surrogate must be one of {SURROGATES}, got {self.surrogate!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.policy in ADAPTIVE and self.surrogate != "bgp":
            raise ConfigError("adaptive batching needs the bgp surrogate")
        needs = self.policy not in LOCAL + TRUE_P
        if needs and self.surrogate == "none":
            raise ConfigError(f"policy {self.policy} needs a surrogate")
        if self.policy in TRUE_P and not self.oracle.synthetic:
            raise ConfigError("true-accuracy baselines need a synthetic oracle")
        if not 0 < self.init_budget < self.budget:
            raise ConfigError("need 0 < init_budget < budget")
        if self.init_batch < 1 or self.init_budget % self.init_batch:
            raise ConfigError("init_budget must be a positive multiple of init_batch")
        for name in ("init_batch", "batch", "cap"):
            v = getattr(self, name)
            if v < c or v % c:
                raise ConfigError(f"{name}={v} must be a positive multiple of the per-sign cost {c}")
        if self.a0_nu < 1 or self.a0_nu * c > self.cap:
            raise ConfigError("need 1 <= a0_nu and a0_nu signs within cap")
        if self.nu_scale <= 0 or self.refit_every < 1 or self.mc < 1:
            raise ConfigError("need nu_scale > 0, refit_every >= 1 and mc >= 1")
        if not 0 < self.alpha < 1 or not 0 < self.delta < 0.5:
            raise ConfigError("need alpha in (0, 1) and delta in (0, 1/2)")

    @property
    def n_init(self) -> int:
        return self.init_budget // self.init_batch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["oracle"]["domain"] = list(d["oracle"]["domain"])
        d["snapshots"] = list(d["snapshots"])
        return d

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown {where} keys: {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(_read_json(path))


def load_campaign(path) -> tuple[str, list[ExperimentConfig]]:
    """A campaign file holds ``base`` settings and a list of ``variants``
    merged over it; a plain experiment file is a one-variant campaign."""
    d = _read_json(path)
    if "variants" not in d:
        return d.get("name", Path(path).stem), [ExperimentConfig.from_dict(d)]
    base = d.get("base", {})
    out = []
    for v in d["variants"]:
        merged = {**base, **v}
        if "oracle" in base and "oracle" in v:
            merged["oracle"] = {**base["oracle"], **v["oracle"]}
        out.append(ExperimentConfig.from_dict(merged))
    names = [c.name for c in out]
    if len(set(names)) != len(names):
        raise ConfigError("campaign variant names must be unique")
    return d.get("name", Path(path).stem), out
