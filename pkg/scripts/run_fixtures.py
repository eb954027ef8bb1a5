"""Run the accel-sensitive and layout-sensitive fixture pairs and print
their verdicts with the measured deformation fractions."""

import argparse
from pathlib import Path

from palletbench.config import load_params
from palletbench.runner import run_simulation

FIXTURES = Path(__file__).resolve().parents[1] / "configs" / "fixtures"
PAIRS = (("accel_low", "accel_high"), ("layout_narrow", "layout_wide"))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dir", type=Path, default=FIXTURES)
    args = ap.parse_args()
    for pair in PAIRS:
        for name in pair:
            p = load_params(args.dir / f"{name}.json")
            r = run_simulation(p).report
            perm = "n/a" if r.permanent_max_frac is None else f"{r.permanent_max_frac:.4f}"
            print(f"{name:14s} accel {p.conditions.accel_g:.1f} g  T {p.tension_T:g}  -> {r.outcome:12s}"
                  f" elastic {r.elastic_max_frac:.4f}  permanent {perm}"
                  f"  violated {sorted(r.criteria_violated()) or '-'}")
        print()


if __name__ == "__main__":
    main()
