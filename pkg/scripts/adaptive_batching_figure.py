"""Realized adaptive batch sizes against the query index on the linear test function.

Runs Ada-sIDS with both threshold scales (0.1/n for a0=100, 0.05/n for
a0=250) and plots a_n for each macro-run, with the running median overlaid.

    python scripts/adaptive_batching_figure.py --runs 3
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from spatial_pba.harness.config import load_config  # noqa: E402
from spatial_pba.harness.runner import crn_roots, run_gpba, run_rng  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


def running_median(a, window=25):
    return np.array([np.median(a[max(0, k - window + 1):k + 1]) for k in range(a.size)])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--out", default=str(ROOT / "results" / "adaptive_batching.svg"))
    args = p.parse_args(argv)
    base = load_config(ROOT / "configs" / "h1_ada_sids_bgp.json")
    variants = [base, base.with_overrides(init_batch=250, nu_scale=0.05)]
    roots = crn_roots(base.seed, args.runs)
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5), sharey=True)
    for ax, cfg in zip(axes, variants):
        for i in range(args.runs):
            rec = run_gpba(cfg, float(roots[i]), run_rng(cfg.seed, i), index=i)
            loop = [r for r in rec.trace if r["phase"] == "loop"]
            n = np.array([r["n"] for r in loop])
            a = np.array([r["a"] for r in loop])
            ax.plot(n, a, ".", ms=2, alpha=0.5)
            ax.plot(n, running_median(a), lw=1)
            print(f"a0={cfg.init_batch} run {i}: sites={rec.n_sites} mean batch={a.mean():.1f} "
                  f"median batch={np.median(a):g}")
        ax.set_yscale("log")
        ax.set_title(f"a0 = {cfg.init_batch}, threshold {cfg.nu_scale:g}/n")
        ax.set_xlabel("site index n")
    axes[0].set_ylabel("batch size")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg", metadata={"Date": None})
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
