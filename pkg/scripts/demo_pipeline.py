#!/usr/bin/env python3
"""End-to-end demo on one synthetic capture pair: simulate a bundle, match it
with the strided local search, extract masks, and print the scores.

Usage: python scripts/demo_pipeline.py [--out DIR] [--perturbation P] [--k K]
"""
import argparse
import sys
from pathlib import Path

from framematch import eval_cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/demo")
    ap.add_argument("--perturbation", type=float, default=0.05)
    ap.add_argument("--k", type=int, default=5)
    args = ap.parse_args()

    out = Path(args.out)
    bundle = out / "bundle"
    steps = [
        ["simulate", "--out", str(bundle), "--perturbation", str(args.perturbation)],
        ["match", "--bundle", str(bundle), "--algorithm", "local-search",
         "--k", str(args.k), "--out", str(out / "match")],
        ["extract", "--bundle", str(bundle), "--mode", "local-search-both",
         "--k", str(args.k), "--out", str(out / "extract")],
    ]
    for step in steps:
        print(f"== framematch {' '.join(step)}")
        code = eval_cli.main(step)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
