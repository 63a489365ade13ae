"""Cross-validate beta, gamma and T on ML-100K, one parameter at a time.

    python scripts/sweep.py [--params beta,gamma,T] [--out-dir runs/sweep]

Each grid holds the other parameters at the preset values and writes one
CSV through ``dcmc sweep-hyper``.
"""
from __future__ import annotations

import argparse
from pathlib import Path

from _common import DEFAULT_DATA, setup_logging

from dcmc.cli import main as dcmc_main

GRIDS = {
    "beta": "0,0.5,1,1.5,2",
    "gamma": "0,0.01,0.05,0.1,0.5",
    "T": "0,1,3,5,10",
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data", default=str(DEFAULT_DATA))
    parser.add_argument("--params", default="beta,gamma,T")
    parser.add_argument("--out-dir", default="runs/sweep")
    parser.add_argument("--epochs", type=int, default=None)
    args = parser.parse_args()
    setup_logging()

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra = ["--epochs", str(args.epochs)] if args.epochs else []
    for name in args.params.split(","):
        code = dcmc_main([
            "-v", "sweep-hyper", "--data", args.data, "--preset", "movielens", "--grid", name,
            "--values", GRIDS[name], "--out", str(out_dir / f"{name}.csv"), *extra,
        ])
        if code:
            return code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
