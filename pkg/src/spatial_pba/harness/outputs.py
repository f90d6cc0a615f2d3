"""CSV metrics, per-run traces and SVG plots."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no date so SVG output is byte-identical across runs
plt.rcParams["svg.hashsalt"] = "spatial-pba"
SVG_META = {"Date": None}

METRIC_COLUMNS = (
    "name", "oracle", "policy", "surrogate", "a0", "budget", "mc", "failed",
    "mean_residual", "mean_ci_length", "coverage", "mean_kl", "finite_kl_runs",
    "median_sites", "mean_T_final",
)
TRACE_COLUMNS = ("phase", "n", "T", "x", "a", "B", "p_hat", "median", "ci_length", "covers", "kl")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_metrics_csv(summaries: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for s in summaries:
            w.writerow([_fmt(s[c]) for c in METRIC_COLUMNS])
    return path


def read_metrics_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


TABLE_METRICS = (("r", "mean_residual"), ("l", "mean_ci_length"), ("c", "coverage"), ("D", "mean_kl"))


def write_table_csv(summaries: list[dict], path) -> Path:
    """Pivot to the results-table layout: one row per (policy, surrogate),
    one column per (metric, initial batch)."""
    a0s = sorted({s["a0"] for s in summaries})
    rows: dict[tuple, dict] = {}
    for s in summaries:
        rows.setdefault((s["policy"], s["surrogate"]), {})[s["a0"]] = s
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "surrogate"] + [f"{m}_a{a}" for m, _ in TABLE_METRICS for a in a0s])
        for (policy, sur), by_a in rows.items():
            cells = [_fmt(by_a[a][key]) if a in by_a else "" for _, key in TABLE_METRICS for a in a0s]
            w.writerow([policy, sur] + cells)
    return path


def write_trace_csv(record, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in record.trace:
            w.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])
    return path


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def plot_snapshots(record, path) -> Path:
    """Posterior density of the root at the snapshot budgets, in domain units."""
    lo, hi = record.domain
    width = hi - lo
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for T, state in record.snapshots:
        edges = lo + state.knots * width
        dens = state.densities / width
        ax.stairs(dens, edges, label=f"T = {T}")
    ax.axvline(record.x_star, color="k", ls="--", lw=0.8, label="root")
    ax.set_yscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_theta(record, path) -> Path:
    """Fitted sign probability against the truth (when known)."""
    lo, hi = record.domain
    curve = record.theta_curve
    x = lo + curve["u"] * (hi - lo)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if "theta_hat" in curve:
        ax.plot(x, curve["theta_hat"], label="fitted")
    if "theta_true" in curve:
        ax.plot(x, curve["theta_true"], "k--", lw=0.8, label="true")
    sites = [r["x"] for r in record.trace]
    frac = [r["B"] / r["a"] for r in record.trace]
    ax.plot(sites, frac, ".", ms=2, alpha=0.4, label="B / a")
    ax.set_xlabel("x")
    ax.set_ylabel("P(positive sign)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def decay_curves(records, grid) -> tuple[np.ndarray, np.ndarray]:
    """Mean absolute residual and CI length as step functions of the budget spent."""
    res, ci = [], []
    for r in records:
        if r.failed or not r.trace:
            continue
        T = np.array([row["T"] for row in r.trace])
        idx = np.searchsorted(T, grid, side="right") - 1
        med = np.array([row["median"] for row in r.trace])
        cil = np.array([row["ci_length"] for row in r.trace])
        valid = idx >= 0
        res.append(np.where(valid, np.abs(med[np.maximum(idx, 0)] - r.x_star), np.nan))
        ci.append(np.where(valid, cil[np.maximum(idx, 0)], np.nan))
    if not res:
        return np.full(grid.shape, np.nan), np.full(grid.shape, np.nan)
    return np.nanmean(res, axis=0), np.nanmean(ci, axis=0)


def plot_decay(records, budget: int, path) -> Path:
    start = min(r.trace[0]["T"] for r in records)
    grid = np.linspace(start, max(budget, start), 200)
    res, ci = decay_curves(records, grid)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(grid, res, label="mean |median - root|")
    ax.plot(grid, ci, label="mean CI length")
    ax.set_yscale("log")
    ax.set_xlabel("budget spent")
    ax.legend(fontsize=8)
    return _save(fig, path)


def emit_outputs(results, out_dir, traces: bool = True, plots: bool = True) -> dict:
    """Write ``metrics.csv`` (one row per configuration), ``table.csv``, traces and plots.

    Returns a mapping of artifact kinds to written paths.
    """
    out = Path(out_dir)
    summaries = [r.summary for r in results]
    written = {"metrics": write_metrics_csv(summaries, out / "metrics.csv"),
               "table": write_table_csv(summaries, out / "table.csv"),
               "traces": [], "plots": []}
    for res in results:
        name = res.config.name
        if traces:
            for rec in res.records:
                written["traces"].append(write_trace_csv(rec, out / "traces" / name / f"run_{rec.index:03d}.csv"))
        ok = [r for r in res.records if not r.failed]
        if plots and ok:
            first = ok[0]
            written["plots"] += [
                plot_snapshots(first, out / "plots" / f"{name}_density.svg"),
                plot_theta(first, out / "plots" / f"{name}_theta.svg"),
                plot_decay(ok, res.config.budget, out / "plots" / f"{name}_decay.svg"),
            ]
    return written
