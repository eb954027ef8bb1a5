"""Run one schema through the bench acceleration sweep and print the verdict
at every step."""

import argparse
from dataclasses import replace

import numpy as np

from palletbench.config import TestingConditions, default_params, load_params, load_schema
from palletbench.runner import run_simulation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--schema", help="schema XML (default parameters otherwise)")
    src.add_argument("--params", help="parameter JSON; its acceleration is overridden")
    ap.add_argument("--impulse", type=float, default=0.5)
    ap.add_argument("--tension", type=float, default=None, help="override tension_T")
    args = ap.parse_args()
    base = load_params(args.params) if args.params else default_params(load_schema(args.schema))
    if args.tension is not None:
        base = replace(base, tension_T=args.tension)
    for a in np.round(np.arange(0.3, 0.81, 0.1), 1):
        cond = replace(base.conditions, accel_g=float(a), impulse_duration=args.impulse)
        res = run_simulation(replace(base, conditions=cond))
        r = res.report
        print(f"{a:.1f} g: {r.outcome:12s} elastic {r.elastic_max_frac:.4f}  "
              f"violated {sorted(r.criteria_violated()) or '-'}  ({res.timing['wall_s']:.1f} s)")


if __name__ == "__main__":
    main()
