"""Run the results-table campaigns for the three synthetic test functions.

Each campaign crosses the site-selection policies with the surrogates at two
initial batch sizes; outputs land in ``results/<campaign>/`` (``metrics.csv``,
``table.csv``, traces and plots). The full 100 macro-runs per cell take hours
on one core; ``--mc`` shrinks the campaign for a quick look.

    python scripts/reproduce_tables.py --mc 10 --jobs 4 --tables 1
"""

import argparse
import sys
from pathlib import Path

from spatial_pba.harness.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]
CAMPAIGNS = {1: "table1_h1", 2: "table2_h2", 3: "table3_h3"}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--tables", type=int, nargs="+", default=[1, 2, 3], choices=sorted(CAMPAIGNS))
    p.add_argument("--mc", type=int, default=None, help="macro-runs per cell (config default: 100)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=str(ROOT / "results"))
    args = p.parse_args(argv)
    worst = 0
    for t in args.tables:
        name = CAMPAIGNS[t]
        cmd = ["campaign", "--config", str(ROOT / "configs" / f"{name}.json"),
               "--out", str(Path(args.out) / name), "--jobs", str(args.jobs), "--no-traces"]
        if args.mc is not None:
            cmd += ["--mc", str(args.mc)]
        if args.seed is not None:
            cmd += ["--seed", str(args.seed)]
        worst = max(worst, cli_main(cmd))
    return worst


if __name__ == "__main__":
    sys.exit(main())
