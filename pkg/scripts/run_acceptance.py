"""Run the acceptance criteria and print one line per criterion.

    python3 scripts/run_acceptance.py [--only C5,C6] [--seed 0]
"""

import argparse
import sys

from rvp.acceptance import Tolerances, run_all


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", help="comma-separated keys")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    only = set(args.only.split(",")) if args.only else None
    results = run_all(Tolerances(), args.seed, only)
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.ok for r in results) else 2)


if __name__ == "__main__":
    main()
