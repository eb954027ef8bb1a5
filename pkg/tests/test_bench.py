import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from palletbench.bench import (
    MotionProfile,
    acceleration_at,
    drive_sleigh,
    position_at,
    velocity_at,
)
from palletbench.config import G, TestingConditions
from palletbench.dynamics import World, step


def prof(a_g=0.5, t_imp=0.5, decel=2.0):
    return MotionProfile(a_g * G, t_imp, decel)


def test_acceleration_phases():
    p = prof()
    assert acceleration_at(p, 0.25) == pytest.approx(4.905, abs=1e-12)
    assert acceleration_at(p, p.t_stop) == 0.0
    assert acceleration_at(p, p.t_stop + 3) == 0.0
    # right-continuous at the end of the impulse
    assert acceleration_at(p, 0.5) == -2.0


def test_velocity_values():
    p = prof()
    assert velocity_at(p, 0.5) == pytest.approx(2.4525, abs=1e-12)
    assert velocity_at(p, 0.0) == 0.0
    assert velocity_at(p, p.t_stop) == 0.0
    assert p.t_stop == pytest.approx(0.5 + 2.4525 / 2.0)


def test_from_conditions():
    p = MotionProfile.from_conditions(TestingConditions(0.3, 0.4, 3.0))
    assert p.accel == pytest.approx(0.3 * 9.81)
    assert p.v_peak == pytest.approx(0.3 * 9.81 * 0.4)


def test_invalid_profile():
    with pytest.raises(ValueError):
        MotionProfile(1.0, 0.5, 0.0)


@given(a=st.sampled_from([0.3, 0.4, 0.5, 0.6, 0.7, 0.8]), t_imp=st.floats(0.35, 0.5),
       decel=st.floats(0.5, 10), t=st.floats(0, 10))
def test_velocity_continuous_nonnegative(a, t_imp, decel, t):
    p = prof(a, t_imp, decel)
    v = velocity_at(p, t)
    assert v >= 0
    eps = 1e-9
    assert abs(velocity_at(p, t + eps) - v) <= max(p.accel, p.decel) * eps * 1.01 + 1e-12


@given(a=st.sampled_from([0.3, 0.4, 0.5, 0.6, 0.7, 0.8]), t_imp=st.sampled_from([0.35, 0.4, 0.45, 0.5]),
       t=st.one_of(st.just(0.0), st.floats(1e-9, 4)))
def test_velocity_is_integral_of_acceleration(a, t_imp, t):
    p = prof(a, t_imp)
    # adaptive quadrature as an independent integrator, split at the kinks
    cuts = [0.0, *[b for b in p.breakpoints if 0 < b < t], t]
    v = sum(quad(lambda s: acceleration_at(p, s), lo, hi)[0] for lo, hi in zip(cuts[:-1], cuts[1:])
            if hi > lo)
    assert velocity_at(p, t) == pytest.approx(v, abs=1e-9)


def _trapezoid_velocity(p, ts):
    """Cumulative trapezoid of the acceleration, each cell split at the
    profile breakpoints and evaluated one-sided inside every piece."""
    out = [0.0]
    for t0, t1 in zip(ts[:-1], ts[1:]):
        cuts = [t0, *[b for b in p.breakpoints if t0 < b < t1], t1]
        inc = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            fa = acceleration_at(p, mid) if a in p.breakpoints else acceleration_at(p, a)
            fb = acceleration_at(p, mid)
            inc += 0.5 * (fa + fb) * (b - a)
        out.append(out[-1] + inc)
    return np.array(out)


def test_trapezoid_matches_velocity():
    dt = 1e-4
    for a in (0.3, 0.55, 0.8):
        p = prof(a, 0.45)
        ts = np.arange(0, 3.0 + dt / 2, dt)
        v = _trapezoid_velocity(p, ts)
        exact = np.array([velocity_at(p, t) for t in ts])
        assert np.max(np.abs(v - exact)) < 1e-6


def test_position_is_integral_of_velocity():
    p = prof(0.7, 0.4)
    for t in (0.2, 0.4, 1.0, p.t_stop, 5.0):
        x = quad(lambda s: velocity_at(p, s), 0, t, points=[b for b in p.breakpoints if b < t] or None)[0]
        assert position_at(p, t) == pytest.approx(x, abs=1e-9)


def _world():
    w = World(gravity=(0, 0, -9.81))
    w.add_body("sleigh", (5, 5, 0.05), 1.0, role="sleigh", pos=(0, 0, -0.05), kinematic=True)
    return w


def test_drive_to_rest_position():
    p = prof(0.5, 0.5, 2.0)
    w = _world()
    dt = 1 / 240
    n = int(np.ceil(p.t_stop / dt)) + 50
    for k in range(n):
        drive_sleigh(w, p, k * dt, dt)
        step(w, dt)
    expect = 0.5 * p.accel * 0.25 + p.v_peak ** 2 / (2 * p.decel)
    assert w.pos[0, 0] == pytest.approx(expect, abs=1e-9)
    assert w.vel[0, 0] == 0.0
    assert w.pos[0, 2] == -0.05


def test_zero_accel_never_moves():
    p = MotionProfile(0.0, 0.5, 2.0)
    w = _world()
    for k in range(300):
        drive_sleigh(w, p, k / 240, 1 / 240)
        step(w, 1 / 240)
    assert np.all(w.pos[0] == (0, 0, -0.05))


@given(t=st.floats(0, 4))
def test_drive_assigns_analytic_velocity(t):
    p = prof(0.6, 0.4)
    w = _world()
    drive_sleigh(w, p, t)
    assert abs(w.vel[0, 0] - velocity_at(p, t)) <= 1e-12
    assert w.pos[0, 0] == position_at(p, t)


@pytest.mark.parametrize("a", [0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
@pytest.mark.parametrize("t_imp", [0.35, 0.4, 0.45, 0.5])
def test_sweep_profiles_constructible(a, t_imp):
    p = prof(a, t_imp)
    assert p.v_peak == pytest.approx(a * G * t_imp, rel=1e-15)
    assert velocity_at(p, p.t_stop) == 0.0
