"""Command-line entry point.

Exit codes: 0 on success, 1 when any macro-run failed (or validation
tests failed), 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..oracles import compute_boundary_table
from .config import ConfigError, ExperimentConfig, load_campaign, load_config
from .outputs import emit_outputs
from .runner import load_or_build_boundary, run_monte_carlo

log = logging.getLogger("spatial_pba")

TESTS_DIR = Path(__file__).resolve().parents[3] / "tests"


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    cfg = cfg.with_overrides(seed=args.seed, refit_every=args.refit_every, mc=args.mc)
    if args.boundary and not cfg.oracle.synthetic:
        cfg = cfg.with_overrides(oracle=replace(cfg.oracle, boundary_file=args.boundary))
    return cfg


def _run_configs(configs: list[ExperimentConfig], args) -> int:
    out = Path(args.out)
    results = []
    boundaries = {}
    for cfg in configs:
        cfg = _apply_overrides(cfg, args)
        boundary = None
        if not cfg.oracle.synthetic:
            key = (cfg.oracle, cfg.seed)
            if key not in boundaries:
                boundaries[key] = load_or_build_boundary(cfg, out)
            boundary = boundaries[key]
        log.info("running %s (%d macro-runs)", cfg.name, cfg.mc)
        results.append(run_monte_carlo(cfg, jobs=args.jobs, boundary=boundary))
    out.mkdir(parents=True, exist_ok=True)
    (out / "configs.json").write_text(json.dumps([r.config.to_dict() for r in results], indent=2) + "\n")
    emit_outputs(results, out, traces=not args.no_traces, plots=not args.no_plots)
    for r in results:
        s = r.summary
        print(f"{s['name']}: residual={s['mean_residual']:.5g} ci={s['mean_ci_length']:.5g} "
              f"coverage={s['coverage']:.3g} kl={s['mean_kl']:.4g} failed={s['failed']}")
    print(f"wrote {out / 'metrics.csv'}")
    return 1 if any(r.summary["failed"] for r in results) else 0


def cmd_run(args) -> int:
    return _run_configs([load_config(args.config)], args)


def cmd_campaign(args) -> int:
    _, configs = load_campaign(args.config)
    return _run_configs(configs, args)


def cmd_boundary(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig(oracle={"kind": "bermudan"})
    if cfg.oracle.synthetic:
        raise ConfigError("the boundary subcommand needs a bermudan oracle config")
    oc = cfg.oracle
    seed = cfg.seed if args.seed is None else args.seed
    table = compute_boundary_table(
        t=oc.t, probes=args.probes, rng=np.random.default_rng(seed), strike=oc.strike, rate=oc.rate,
        vol=oc.vol, maturity=oc.maturity, dt=oc.dt, domain=oc.domain,
    )
    out = Path(args.out)
    path = out if out.suffix == ".csv" else out / "boundary.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path)
    print(f"wrote {path}")
    return 0


def cmd_validate(args) -> int:
    import pytest

    if not TESTS_DIR.is_dir():
        print(f"test directory not found: {TESTS_DIR}", file=sys.stderr)
        return 2
    code = pytest.main([str(TESTS_DIR), "-q", "-m", "not slow", "-p", "no:cacheprovider"])
    return 0 if code == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatial-pba", description="Spatial probabilistic bisection experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--out", default="results", help="output directory")

    for name, fn, helptext in (("run", cmd_run, "run one configuration"),
                               ("campaign", cmd_campaign, "run every variant of a campaign file")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--jobs", type=int, default=1, help="parallel macro-runs")
        sp.add_argument("--refit-every", type=int, default=None, help="refit the surrogate every k sites")
        sp.add_argument("--mc", type=int, default=None, help="override the number of macro-runs")
        sp.add_argument("--boundary", default=None, help="boundary-table CSV for the bermudan oracle")
        sp.add_argument("--no-traces", action="store_true", help="skip per-run trace CSVs")
        sp.add_argument("--no-plots", action="store_true", help="skip SVG plots")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("boundary", help="precompute the exercise-boundary table")
    common(sp, config_required=False)
    sp.add_argument("--probes", type=int, default=1000, help="bisection probes per exercise date")
    sp.set_defaults(func=cmd_boundary)

    sp = sub.add_parser("validate", help="run the fast test suites")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
