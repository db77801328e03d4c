#!/usr/bin/env python3
"""Run the full experiment battery (exp1-3, certify, bench) into one directory.

Usage: python scripts/run_experiments.py [--config FILE] [--out DIR] [--seed N]
"""
import argparse
import sys
from pathlib import Path

from framematch import eval_cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    common = []
    if args.config:
        common += ["--config", args.config]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]

    worst = 0
    for command in ("exp1", "exp2", "exp3", "certify", "bench"):
        out = Path(args.out) / command
        print(f"== {command} -> {out}")
        code = eval_cli.main([command, *common, "--out", str(out)])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
