#!/usr/bin/env python3
"""Run the five-condition matrix over the model zoo and print one line per model.

    python3 scripts/run_theorem_matrix.py --seed 42 --out matrix.json
    python3 scripts/run_theorem_matrix.py --thorough --models product_sphere
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings

from lfgeom import ZOO_NAMES, Budget, verify_theorem_1_1, zoo_model


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--models", nargs="*", default=list(ZOO_NAMES))
    p.add_argument("--thorough", action="store_true", help="larger sampling budgets (slow)")
    p.add_argument("--out", default=None, help="write the combined JSON report here")
    args = p.parse_args(argv)

    budget = Budget.thorough() if args.thorough else Budget()
    rows = {}
    for name in args.models:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = verify_theorem_1_1(zoo_model(name), budget=budget, seed=args.seed)
        rows[name] = rep.to_json()
        worst = {k: f"{r.worst_deficit:+.2e}" for k, r in rep.reports.items()}
        tag = "" if rep.berwald else "  [not Berwald]"
        print(f"{name:20s} agree={str(rep.agree):5s} {' '.join(rep.verdicts)}{tag}")
        print(f"{'':20s} {worst}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
