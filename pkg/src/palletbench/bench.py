"""Prescribed sleigh kinematics: a square acceleration impulse, then constant
deceleration until the sleigh stops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import G, TestingConditions
from .dynamics.world import World, bodies_by_role


@dataclass(frozen=True)
class MotionProfile:
    accel: float  # m/s^2
    impulse_duration: float  # s
    decel: float  # m/s^2

    def __post_init__(self):
        if self.accel < 0 or self.impulse_duration < 0:
            raise ValueError("accel and impulse_duration must be non-negative")
        if self.decel <= 0:
            raise ValueError("decel must be positive")

    @classmethod
    def from_conditions(cls, cond: TestingConditions) -> "MotionProfile":
        return cls(cond.accel_g * G, cond.impulse_duration, cond.decel_rate)

    @property
    def v_peak(self) -> float:
        return self.accel * self.impulse_duration

    @property
    def t_stop(self) -> float:
        return self.impulse_duration + self.v_peak / self.decel

    @property
    def x_impulse(self) -> float:
        return 0.5 * self.accel * self.impulse_duration ** 2

    @property
    def x_stop(self) -> float:
        return self.x_impulse + self.v_peak ** 2 / (2 * self.decel)

    @property
    def breakpoints(self) -> tuple[float, float]:
        return self.impulse_duration, self.t_stop


def acceleration_at(profile: MotionProfile, t: float) -> float:
    """Right-continuous: the deceleration phase starts exactly at t_imp."""
    if t < profile.impulse_duration:
        return profile.accel
    if t < profile.t_stop:
        return -profile.decel
    return 0.0


def velocity_at(profile: MotionProfile, t: float) -> float:
    t_imp = profile.impulse_duration
    if t <= t_imp:
        return profile.accel * max(t, 0.0)
    if t >= profile.t_stop:
        return 0.0
    return max(profile.v_peak - profile.decel * (t - t_imp), 0.0)


def position_at(profile: MotionProfile, t: float) -> float:
    t_imp = profile.impulse_duration
    if t <= t_imp:
        return 0.5 * profile.accel * max(t, 0.0) ** 2
    if t >= profile.t_stop:
        return profile.x_stop
    s = t - t_imp
    return profile.x_impulse + profile.v_peak * s - 0.5 * profile.decel * s * s


def sleigh_index(world: World) -> int:
    idx = bodies_by_role(world, "sleigh")
    if len(idx) != 1:
        raise ValueError(f"world must contain exactly one sleigh, found {len(idx)}")
    return idx[0]


def drive_sleigh(world: World, profile: MotionProfile, t: float, dt: float | None = None,
                 x0: float = 0.0) -> World:
    """Place the sleigh at its analytic pose for time ``t``.

    With ``dt`` given, the assigned velocity is the mean over [t, t+dt], so
    that the position integrated by the stepper lands exactly on the
    analytic position at t+dt. Without it the velocity is ``velocity_at(t)``.
    Only the x coordinate is prescribed (``x0 + x(t)``); height and lateral
    position are left as built.
    """
    i = sleigh_index(world)
    x = position_at(profile, t)
    v = velocity_at(profile, t) if dt is None else (position_at(profile, t + dt) - x) / dt
    world.pos[i, 0] = x0 + x
    world.vel[i] = (v, 0.0, 0.0)
    world.omega[i] = 0.0
    return world
