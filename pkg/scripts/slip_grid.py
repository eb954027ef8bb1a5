"""Single box on the sleigh: simulated slip against the rule a > mu*g.

Prints one row per friction coefficient and one column per acceleration;
``S`` is slip and ``.`` is stick. Where the simulation disagrees with the
rule the cell shows ``s`` (slipped unexpectedly) or ``,`` (held
unexpectedly). ``~`` marks cells within 0.05 g of the boundary.
"""

import argparse
import itertools

import numpy as np

from palletbench.bench import MotionProfile, drive_sleigh
from palletbench.config import G, EngineSettings
from palletbench.dynamics import World, step


def slip_distance(a_g: float, mu: float, t_imp: float, dt: float, sleigh_mu: float) -> float:
    w = World()
    w.add_body("sleigh", (3, 3, 0.05), 1.0, role="sleigh", pos=(0, 0, -0.05), friction=sleigh_mu,
               kinematic=True)
    w.add_body("box", (0.2, 0.15, 0.125), 10.0, pos=(0, 0, 0.1251), friction=mu * mu / sleigh_mu)
    for _ in range(60):
        step(w, dt)
    x0 = w.pos[1, 0] - w.pos[0, 0]
    prof = MotionProfile(a_g * G, t_imp, 2.0)
    for k in range(int(round(t_imp / dt))):
        drive_sleigh(w, prof, k * dt, dt)
        step(w, dt)
    return abs(w.pos[1, 0] - w.pos[0, 0] - x0)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--impulse", type=float, default=0.5, help="impulse duration, s")
    ap.add_argument("--tol", type=float, default=0.005, help="relative travel counted as slip, m")
    args = ap.parse_args()
    accels = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
    mus = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    sleigh_mu = EngineSettings().sleigh_friction
    print("mu \\ a[g] " + " ".join(f"{a:4.1f}" for a in accels))
    agree = cells = 0
    rows = {mu: [] for mu in mus}
    for mu, a in itertools.product(mus, accels):
        d = slip_distance(a, mu, args.impulse, 1 / 240, sleigh_mu)
        sim, rule = d > args.tol, a > mu
        if abs(a - mu) < 0.05 - 1e-12:
            rows[mu].append("   ~")
            continue
        cells += 1
        agree += sim == rule
        ch = "S" if sim else "."
        rows[mu].append("   " + (ch if sim == rule else ch.lower() if sim else ","))
    for mu in mus:
        print(f"{mu:9.1f} " + " ".join(rows[mu]))
    print(f"agreement {agree}/{cells} ({100 * agree / cells:.1f}%)")


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    main()
