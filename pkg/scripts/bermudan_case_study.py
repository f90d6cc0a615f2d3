"""Locate the Bermudan put exercise boundary at t = 0.6 with Ada-sIDS + B-GP.

First builds the boundary table for later exercise dates by a backward
bisection sweep, then runs the configured macro-runs against it.

    python scripts/bermudan_case_study.py --mc 10
"""

import argparse
import sys
from pathlib import Path

from spatial_pba.harness.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "bermudan_ada_sids_bgp.json"))
    p.add_argument("--mc", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=str(ROOT / "results" / "bermudan"))
    args = p.parse_args(argv)
    out = Path(args.out)
    boundary = out / "boundary.csv"
    if not boundary.exists():
        code = cli_main(["boundary", "--config", args.config, "--out", str(boundary)])
        if code:
            return code
    cmd = ["run", "--config", args.config, "--boundary", str(boundary), "--out", str(out), "--jobs", str(args.jobs)]
    if args.mc is not None:
        cmd += ["--mc", str(args.mc)]
    return cli_main(cmd)


if __name__ == "__main__":
    sys.exit(main())
