"""Acceptance criteria, one test per criterion.

Every test records a ``criterion N ... PASS|FAIL`` line (printed directly and
repeated in the pytest terminal summary) before asserting, so a failing
criterion is reported with its measured numbers rather than hidden.
"""

import itertools
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, DATA, FIXTURES
from palletbench.bench import MotionProfile, acceleration_at, drive_sleigh, position_at, velocity_at
from palletbench.config import (
    G,
    ParameterRanges,
    TestingConditions,
    ValidationThresholds,
    augment_schema,
    default_params,
    load_params,
    load_schema,
)
from palletbench.dynamics import World, detect_contacts, quat_from_axis_angle, step
from palletbench.restraint import base_strength
from palletbench.runner import canonical_json, run_campaign, run_simulation, strip_timing
from palletbench.scene import build_scene
from palletbench.validation import DeformationTrace, WrapStrainTrace, classify

ACCEL_GRID = [0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
DT = 1 / 240


def record(n: int, name: str, ok: bool, detail: str, elapsed: float, limit: float) -> None:
    fast = elapsed < limit
    verdict = "PASS" if ok and fast else "FAIL"
    line = (f"criterion {n} [{name}]: {verdict} - {detail}; "
            f"runtime {elapsed:.2f} s (limit {limit:g} s)")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert fast, line


# 1 -----------------------------------------------------------------------------


def test_criterion_1_base_strength():
    t0 = time.perf_counter()
    worst = 0.0
    n = 0
    for T, m, a_g in itertools.product([0.0, 0.5, 1.0, 2.0], np.arange(50.0, 1000.1, 50.0), ACCEL_GRID):
        a = a_g * G
        expect = (T / 4) * m * a
        got = base_strength(T, m, a)
        err = 0.0 if expect == got else abs(got - expect) / abs(expect)
        worst = max(worst, err)
        n += 1
    record(1, "base strength formula", worst <= 1e-12, f"{n} grid points, max rel err {worst:.2e}",
           time.perf_counter() - t0, 1.0)


# 2 -----------------------------------------------------------------------------


def _midpoint_velocity(profile: MotionProfile, ts: np.ndarray) -> np.ndarray:
    """Composite midpoint rule for the acceleration, with every cell split
    at the profile breakpoints (the integrand jumps there)."""
    v = [0.0]
    for a, b in zip(ts[:-1], ts[1:]):
        cuts = [a, *[bp for bp in profile.breakpoints if a < bp < b], b]
        v.append(v[-1] + sum(acceleration_at(profile, 0.5 * (lo + hi)) * (hi - lo)
                             for lo, hi in zip(cuts[:-1], cuts[1:])))
    return np.array(v)


def test_criterion_2_motion_profile():
    t0 = time.perf_counter()
    worst_v = worst_x = 0.0
    analytic_ok = True
    for a_g, t_imp in itertools.product(ACCEL_GRID, [0.35, 0.4, 0.45, 0.5]):
        p = MotionProfile.from_conditions(TestingConditions(a_g, t_imp, 2.0))
        analytic_ok &= p.v_peak == a_g * G * t_imp and velocity_at(p, p.t_stop) == 0.0
        n = int(np.ceil((p.t_stop + 0.25) / DT))
        ts = np.arange(n + 1) * DT
        v_num = _midpoint_velocity(p, ts)
        v_ref = np.array([velocity_at(p, t) for t in ts])
        worst_v = max(worst_v, float(np.max(np.abs(v_num - v_ref))))
        # the sleigh driven through the engine lands on the analytic path
        w = World()
        w.add_body("sleigh", (1, 1, 0.05), 1.0, role="sleigh", pos=(0, 0, -0.05), kinematic=True)
        for k in range(n):
            drive_sleigh(w, p, k * DT, DT)
            step(w, DT)
            worst_x = max(worst_x, abs(w.pos[0, 0] - position_at(p, (k + 1) * DT)))
    ok = analytic_ok and worst_v <= 1e-3 and worst_x <= 1e-9
    record(2, "motion profile", ok,
           f"24 profiles, analytic v_peak/v(t_stop) {'exact' if analytic_ok else 'WRONG'}, "
           f"max |v_num - v| {worst_v:.2e} m/s, engine position err {worst_x:.2e} m",
           time.perf_counter() - t0, 5.0)


# 3 -----------------------------------------------------------------------------


SLIP_TOL = 0.005  # m of relative travel over the impulse that counts as slip


def _single_box_slip(a_g: float, mu: float, t_imp: float = 0.5) -> float:
    sleigh_mu = default_params().engine.sleigh_friction
    w = World()
    w.add_body("sleigh", (3, 3, 0.05), 1.0, role="sleigh", pos=(0, 0, -0.05), friction=sleigh_mu,
               kinematic=True)
    # combined coefficient sqrt(mu_box * mu_sleigh) equals mu
    w.add_body("box", (0.2, 0.15, 0.125), 10.0, pos=(0, 0, 0.1251), friction=mu * mu / sleigh_mu)
    for _ in range(60):
        step(w, DT)
    x0 = w.pos[1, 0] - w.pos[0, 0]
    p = MotionProfile(a_g * G, t_imp, 2.0)
    for k in range(int(round(t_imp / DT))):
        drive_sleigh(w, p, k * DT, DT)
        step(w, DT)
    return abs(w.pos[1, 0] - w.pos[0, 0] - x0)


def test_criterion_3_slip_oracle():
    t0 = time.perf_counter()
    cells = agree = excluded = 0
    wrong = []
    for a_g, mu in itertools.product(ACCEL_GRID, [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]):
        if abs(a_g - mu) < 0.05 - 1e-12:
            excluded += 1
            continue
        cells += 1
        slipped = _single_box_slip(a_g, mu) > SLIP_TOL
        expect = a_g * G > mu * G
        if slipped == expect:
            agree += 1
        else:
            wrong.append((a_g, mu))
    frac = agree / cells
    record(3, "Coulomb slip oracle", frac >= 0.95,
           f"{agree}/{cells} cells agree ({100 * frac:.1f}%), {excluded} boundary cells excluded"
           + (f", disagree at {wrong}" if wrong else ""), time.perf_counter() - t0, 120.0)


# 4 -----------------------------------------------------------------------------


def brute_force(disp, speed, heights, times, strains, th, H, t_stop, tear):
    """Loop-by-loop reading of the four rules, written independently of
    ``classify``. Limits are compared as lengths (d > frac*H) so an input
    built as exactly frac*H sits exactly on the boundary."""
    F, n, _ = disp.shape
    hold = int(round(th.settle_hold / (times[1] - times[0])))
    settle = None
    for f in range(F):
        ok = True
        for g in range(f - hold, f + 1):
            if g < 0 or times[g] < t_stop - 1e-9:
                ok = False
                break
            if any(speed[g, i] >= th.settle_speed_eps for i in range(n)):
                ok = False
                break
        if ok:
            settle = f
            break
    crit = set()
    last = F - 1 if settle is None else settle
    for f in range(last + 1):
        for i in range(n):
            for c in range(8):
                if disp[f, i, c] > th.elastic_frac * H:
                    crit.add("elastic")
    if settle is not None:
        for i in range(n):
            for c in range(8):
                d = disp[settle, i, c]
                if d > th.permanent_frac * H:
                    crit.add("permanent")
                if heights[i, c] < th.bottom_zone_height and d >= th.bottom_zone_limit:
                    crit.add("bottom_zone")
    for s in strains:
        if s >= tear:
            crit.add("wrap_integrity")
    if settle is None:
        outcome = "inconclusive"
    else:
        outcome = "failure" if crit else "success"
    return outcome, crit, settle


def _synthetic_case(rng: np.random.Generator):
    H = float(rng.choice([0.8, 1.0, 1.144, 1.394, 1.5, 2.394, rng.uniform(0.5, 3.0)]))
    F = int(rng.integers(50, 150))
    n = int(rng.integers(1, 7))
    fdt = 1 / 60
    times = np.arange(F) * fdt
    t_stop = float(rng.uniform(0.0, 0.8))
    scale = float(rng.choice([0.005, 0.01, 0.03, 0.06, 0.15, 0.3])) * H
    disp = rng.uniform(0, scale, size=(F, n, 8))
    disp[0] = 0.0
    # exact boundary values and their neighbours
    specials = [0.05 * H, 0.10 * H, 0.04, 0.039, np.nextafter(0.05 * H, 1), np.nextafter(0.10 * H, 0),
                np.nextafter(0.04, 0), np.nextafter(0.10 * H, 1)]
    for _ in range(int(rng.integers(0, 12)) * int(rng.random() < 0.6)):
        disp[rng.integers(0, F), rng.integers(0, n), rng.integers(0, 8)] = rng.choice(specials)
    if rng.random() < 0.5:
        # pin every final-frame value to one boundary
        disp[-40:] = rng.choice(specials)
    heights = rng.uniform(0, 1.2, size=(n, 8))
    heights[rng.random((n, 8)) < 0.1] = 0.2
    calm_from = int(rng.integers(0, F // 2 if rng.random() < 0.7 else F))
    speed = np.where(np.arange(F)[:, None] < calm_from, rng.uniform(0, 0.5, size=(F, n)),
                     rng.uniform(0, 0.0099, size=(F, n)))
    if rng.random() < 0.3:
        speed[rng.integers(0, F), rng.integers(0, n)] = 0.01  # exactly eps is not calm
    tear = 0.25
    strains = rng.uniform(0, float(rng.choice([0.1, 0.2, 0.3])), size=F)
    if rng.random() < 0.3:
        strains[rng.integers(0, F)] = tear
    return disp, speed, heights, times, strains, H, t_stop, tear, fdt


def test_criterion_4_threshold_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(40509)
    th = ValidationThresholds()
    agree = 0
    outcomes = {"success": 0, "failure": 0, "inconclusive": 0}
    mismatches = []
    for k in range(1000):
        disp, speed, heights, times, strains, H, t_stop, tear, fdt = _synthetic_case(rng)
        tr = DeformationTrace.from_arrays(disp, speed, heights, fdt)
        ws = WrapStrainTrace(strains, np.zeros(len(strains), np.int64))
        rep = classify(tr, ws, th, H, t_stop=t_stop, tear_threshold=tear)
        ref = brute_force(disp, speed, heights, times, strains, th, H, t_stop, tear)
        got = (rep.outcome, rep.criteria_violated(), rep.settle_frame)
        outcomes[rep.outcome] += 1
        if got == ref:
            agree += 1
        elif len(mismatches) < 3:
            mismatches.append((k, got, ref))
    record(4, "threshold oracle", agree == 1000,
           f"{agree}/1000 traces agree (outcomes {outcomes})"
           + (f", first mismatches {mismatches}" if mismatches else ""),
           time.perf_counter() - t0, 10.0)


# 5 -----------------------------------------------------------------------------


def test_criterion_5_one_way_coupling():
    t0 = time.perf_counter()
    base = load_params(FIXTURES / "accel_low.json")
    p = replace(base, conditions=TestingConditions(0.5, 0.5, 2.0), tension_T=1.0)
    on = run_simulation(p, keep_frames=True)
    off = run_simulation(replace(p, cloth=replace(p.cloth, enabled=False)), keep_frames=True)
    same_len = len(on.frames) == len(off.frames)
    identical = same_len and all(
        np.array_equal(a.pos, b.pos) and np.array_equal(a.quat, b.quat)
        and np.array_equal(a.vel, b.vel) and np.array_equal(a.omega, b.omega)
        for a, b in zip(on.frames, off.frames))
    moved = max(float(np.abs(f.pos - on.frames[0].pos).max()) for f in on.frames)
    record(5, "one-way coupling", identical and on.frames[0].wrap_vertices is not None,
           f"{len(on.frames)} vs {len(off.frames)} frames, rigid state bit-identical: {identical}, "
           f"max body travel {moved:.3f} m", time.perf_counter() - t0, 60.0)


# 6 -----------------------------------------------------------------------------


def test_criterion_6_campaign_parallelism(monkeypatch, tmp_path):
    monkeypatch.delenv("PALLETBENCH_THREADS", raising=False)
    t0 = time.perf_counter()
    schema = load_schema(DATA / "six_layer.xml")
    base = replace(default_params(schema), max_duration=6.0, tension_T=0.5)
    ranges = ParameterRanges()
    s1, b1 = run_campaign(schema, ranges, 20, 2024, 1, base=base, out_dir=tmp_path / "p1")
    s8, b8 = run_campaign(schema, ranges, 20, 2024, 8, base=base, out_dir=tmp_path / "p8")
    strip = [canonical_json(strip_timing(json.loads(b))) for b in b1]
    strip8 = [canonical_json(strip_timing(json.loads(b))) for b in b8]
    same_runs = strip == strip8
    same_stats = ((tmp_path / "p1" / "statistics.json").read_bytes()
                  == (tmp_path / "p8" / "statistics.json").read_bytes())
    errors = sum(1 for b in b1 if json.loads(b).get("error"))
    record(6, "determinism and parallelism independence", same_runs and same_stats and errors == 0,
           f"20 runs, reports identical: {same_runs}, statistics identical: {same_stats}, "
           f"engine errors {errors}, outcomes {s1.successes}/{s1.failures}/{s1.inconclusive} "
           "success/failure/inconclusive", time.perf_counter() - t0, 300.0)


# 7 -----------------------------------------------------------------------------


def _momentum_case(rng):
    w = World(gravity=(0, 0, 0))
    for k in range(3):
        q = quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, np.pi))
        w.add_body(f"b{k}", rng.uniform(0.1, 0.3, size=3), rng.uniform(1, 20),
                   pos=(0.45 * k, rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)), quat=q,
                   vel=rng.normal(size=3), omega=rng.normal(size=3), friction=0.0)
    p0 = (w.mass[:, None] * w.vel).sum(0)
    for _ in range(1000):
        step(w, DT)
    p1 = (w.mass[:, None] * w.vel).sum(0)
    return float(np.linalg.norm(p1 - p0) / np.linalg.norm(p0))


def test_criterion_7_conservation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mom = max(_momentum_case(rng) for _ in range(5))

    w = World(gravity=(0, 0, 0))
    w.add_body("spin", (0.3, 0.2, 0.05), 3.0, omega=(1.0, 2.0, 0.5))
    L0 = w.angular_momentum()[0].copy()
    for _ in range(240):
        step(w, DT)
    ang = float(np.linalg.norm(w.angular_momentum()[0] - L0) / np.linalg.norm(L0))

    schema = augment_schema(load_schema(DATA / "six_layer.xml"), 0, 8)
    sc = build_scene(schema, default_params(schema))
    depth = 0.0
    for _ in range(240):
        step(sc.world, DT)
        depth = max(depth, max((c.penetration for c in detect_contacts(sc.world)), default=0.0))
    ok = mom <= 1e-9 and ang <= 1e-6 and depth <= 0.002
    record(7, "conservation suite", ok,
           f"momentum rel err {mom:.2e}, angular momentum rel err {ang:.2e}, "
           f"8-layer stack max penetration {depth * 1000:.3f} mm", time.perf_counter() - t0, 60.0)


# 8 -----------------------------------------------------------------------------


def test_criterion_8_fixture_pair_behaviour():
    t0 = time.perf_counter()
    got = {name: run_simulation(load_params(FIXTURES / f"{name}.json")).report.outcome
           for name in ("accel_low", "accel_high", "layout_narrow", "layout_wide")}
    expect = {"accel_low": "success", "accel_high": "failure",
              "layout_narrow": "failure", "layout_wide": "success"}
    record(8, "accel- and layout-sensitive verdicts", got == expect,
           ", ".join(f"{k}={v}" for k, v in got.items()), time.perf_counter() - t0, 120.0)


# 9 -----------------------------------------------------------------------------


def test_criterion_9_not_reproducible_here():
    # the video classifier metrics and the rendered dataset are out of scope;
    # the verdict is NOT REPRODUCED, and the test only checks that the
    # substitute criteria 3-8 ran and passed in this session
    passed = {int(l.split()[1]) for l in ACCEPTANCE_LINES if ": PASS - " in l}
    missing = sorted(set(range(3, 9)) - passed)
    seen = {int(l.split()[1]) for l in ACCEPTANCE_LINES}
    if set(range(3, 9)) - seen:
        pytest.skip(f"substitute criteria {sorted(set(range(3, 9)) - seen)} not run in this session")
    line = ("criterion 9 [video classifier metrics and rendered dataset]: NOT REPRODUCED - "
            "no classifier or rendered videos in this package; substitutes 3-8 "
            + ("all passed" if not missing else f"failing: {missing}")
            + "; dataset generation exercised by criterion 6")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert not missing, line
