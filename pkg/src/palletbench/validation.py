"""Deformation tracking and the pass/fail rules for an acceleration test.

Displacements are horizontal (x-y) magnitudes of the 8 corners of every
package, measured in the sleigh frame against the corners at frame 0.
Comparisons use absolute lengths (``disp > frac * H``) so boundary values
are decided without a division round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ValidationThresholds
from .dynamics.world import box_corners, quat_to_matrix
from .errors import NotSettled, TraceOrderError

SUCCESS, FAILURE, INCONCLUSIVE = "success", "failure", "inconclusive"
CRITERIA = ("elastic", "permanent", "bottom_zone", "wrap_integrity")


@dataclass
class DeformationTrace:
    """Per-frame corner displacements and speeds of the packages."""

    package_ids: tuple[str, ...]
    half: np.ndarray  # (n, 3)
    base_z: float  # height of the unit base (pallet bottom)
    frame_dt: float
    initial_corners: np.ndarray | None = None  # (n, 8, 3) sleigh frame
    times: list[float] = field(default_factory=list)
    disp: list[np.ndarray] = field(default_factory=list)  # (n, 8) per frame
    speed: list[np.ndarray] = field(default_factory=list)  # (n,) per frame

    @property
    def n_frames(self) -> int:
        return len(self.times)

    def displacements(self) -> np.ndarray:
        """(frames, n, 8) array."""
        if not self.disp:
            return np.zeros((0, len(self.package_ids), 8))
        return np.stack(self.disp)

    def speeds(self) -> np.ndarray:
        if not self.speed:
            return np.zeros((0, len(self.package_ids)))
        return np.stack(self.speed)

    def frame_max(self) -> np.ndarray:
        d = self.displacements()
        return d.reshape(len(d), -1).max(axis=1) if d.size else np.zeros(len(d))

    def bottom_mask(self, zone: float) -> np.ndarray:
        """(n, 8) corners whose initial height above the unit base is below ``zone``."""
        return (self.initial_corners[:, :, 2] - self.base_z) < zone

    @classmethod
    def from_arrays(cls, disp: np.ndarray, speed: np.ndarray, corner_heights: np.ndarray,
                    frame_dt: float, package_ids: Sequence[str] | None = None) -> "DeformationTrace":
        """Synthetic trace from (F, n, 8) displacements, (F, n) speeds and
        (n, 8) initial corner heights above the base."""
        disp = np.asarray(disp, float)
        n = disp.shape[1]
        ids = tuple(package_ids) if package_ids is not None else tuple(f"p{i}" for i in range(n))
        corners = np.zeros((n, 8, 3))
        corners[:, :, 2] = corner_heights
        tr = cls(ids, np.zeros((n, 3)), 0.0, frame_dt, corners)
        tr.times = [k * frame_dt for k in range(len(disp))]
        tr.disp = list(disp)
        tr.speed = list(np.asarray(speed, float))
        return tr


def new_trace(package_ids, half, base_z: float, frame_dt: float) -> DeformationTrace:
    return DeformationTrace(tuple(package_ids), np.asarray(half, float).copy(), float(base_z), frame_dt)


def _sleigh_frame(points: np.ndarray, sleigh_pos, sleigh_quat) -> np.ndarray:
    R = quat_to_matrix(np.asarray(sleigh_quat, float))
    return (points - np.asarray(sleigh_pos, float)) @ R


def track(trace: DeformationTrace, t: float, pos: np.ndarray, quat: np.ndarray, vel: np.ndarray,
          omega: np.ndarray, sleigh_pos, sleigh_quat=(1.0, 0.0, 0.0, 0.0),
          sleigh_vel=(0.0, 0.0, 0.0)) -> DeformationTrace:
    """Append one frame for the packages given by ``pos``/``quat``/``vel``/``omega``.

    Speeds are corner-speed bounds ``|v - v_sleigh| + |omega| |half|``.
    """
    if trace.times and t <= trace.times[-1]:
        raise TraceOrderError(f"frame at t={t} after t={trace.times[-1]}")
    corners = _sleigh_frame(box_corners(np.asarray(pos, float), np.asarray(quat, float), trace.half),
                            sleigh_pos, sleigh_quat)
    if trace.initial_corners is None:
        trace.initial_corners = corners
    d = corners - trace.initial_corners
    trace.times.append(float(t))
    trace.disp.append(np.hypot(d[:, :, 0], d[:, :, 1]))
    v = np.linalg.norm(np.asarray(vel, float) - np.asarray(sleigh_vel, float), axis=1)
    trace.speed.append(v + np.linalg.norm(omega, axis=1) * np.linalg.norm(trace.half, axis=1))
    return trace


def speed_monitor(trace: DeformationTrace, t_stop: float, eps: float, hold: float) -> int:
    """First frame index at which every package has been slower than ``eps``
    for ``hold`` seconds, counting only frames from the bench stop on."""
    sp = trace.speeds()
    if not len(sp):
        raise NotSettled("empty trace")
    times = np.asarray(trace.times)
    hold_frames = int(round(hold / trace.frame_dt))
    start = int(np.searchsorted(times, t_stop - 1e-9))
    calm = sp.max(axis=1) < eps
    run = 0
    for f in range(start, len(calm)):
        run = run + 1 if calm[f] else 0
        if run > hold_frames:
            return f
    raise NotSettled(f"not settled by t={times[-1]:.3f} s")


def elastic_deformation(trace: DeformationTrace, H: float, end_frame: int | None = None) -> float:
    d = trace.displacements()
    if end_frame is not None:
        d = d[:end_frame + 1]
    return float(d.max() / H) if d.size else 0.0


def permanent_deformation(trace: DeformationTrace, H: float, settle_frame: int) -> float:
    d = trace.displacements()[settle_frame]
    return float(d.max() / H) if d.size else 0.0


def bottom_zone_check(trace: DeformationTrace, settle_frame: int, zone: float = 0.20,
                      limit: float = 0.04) -> tuple[float, bool]:
    """Largest settled displacement among corners starting below ``zone``
    above the unit base, and whether it is within ``limit`` (strictly less)."""
    d = trace.displacements()[settle_frame]
    mask = trace.bottom_mask(zone)
    m = float(d[mask].max()) if mask.any() else 0.0
    return m, m < limit


@dataclass(frozen=True)
class WrapStrainTrace:
    """Per-frame maximum edge strain and the edge that carried it."""

    max_strain: np.ndarray
    max_edge: np.ndarray

    @classmethod
    def empty(cls) -> "WrapStrainTrace":
        return cls(np.zeros(0), np.zeros(0, np.int64))


@dataclass(frozen=True)
class CriterionViolation:
    criterion: str
    ids: tuple[str, ...]
    frame: int
    value: float
    threshold: float

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "ids": list(self.ids), "frame": self.frame,
                "value": self.value, "threshold": self.threshold}


@dataclass(frozen=True)
class ValidationReport:
    outcome: str
    elastic_max_frac: float
    permanent_max_frac: float | None
    bottom_zone_permanent_m: float | None
    max_wrap_strain: float
    violations: tuple[CriterionViolation, ...] = ()
    settle_frame: int | None = None

    @property
    def measurements(self) -> dict:
        return {"elastic_max_frac": self.elastic_max_frac,
                "permanent_max_frac": self.permanent_max_frac,
                "bottom_zone_permanent_m": self.bottom_zone_permanent_m,
                "max_wrap_strain": self.max_wrap_strain}

    def criteria_violated(self) -> set[str]:
        return {v.criterion for v in self.violations}


def _worst(trace: DeformationTrace, d: np.ndarray) -> str:
    return trace.package_ids[int(np.unravel_index(np.argmax(d), d.shape)[0])]


def classify(trace: DeformationTrace, wrap_strains: WrapStrainTrace | None,
             thresholds: ValidationThresholds, H: float, *, t_stop: float = 0.0,
             tear_threshold: float = float("inf"), settle_frame: int | None = None) -> ValidationReport:
    """Apply the four criteria.

    Permanent and elastic limits fail when exceeded (``>``); the bottom-zone
    limit fails when reached (``>=``); the wrap fails when any edge strain
    reaches ``tear_threshold`` in any frame. If the unit never settles the
    outcome is inconclusive and the settled measurements are ``None``.
    """
    th = thresholds
    if settle_frame is None:
        try:
            settle_frame = speed_monitor(trace, t_stop, th.settle_speed_eps, th.settle_hold)
        except NotSettled:
            settle_frame = None
    D = trace.displacements()
    viol: list[CriterionViolation] = []

    window = D if settle_frame is None else D[:settle_frame + 1]
    flat = window.reshape(len(window), -1)
    elastic = float(window.max()) if window.size else 0.0
    if elastic > th.elastic_frac * H:
        f = int(np.argmax(flat.max(axis=1)))
        viol.append(CriterionViolation("elastic", (_worst(trace, window[f]),), f, elastic / H,
                                       th.elastic_frac))

    perm = bottom = None
    if settle_frame is not None:
        final = D[settle_frame]
        perm_m = float(final.max()) if final.size else 0.0
        perm = perm_m / H
        if perm_m > th.permanent_frac * H:
            viol.append(CriterionViolation("permanent", (_worst(trace, final),), settle_frame, perm,
                                           th.permanent_frac))
        mask = trace.bottom_mask(th.bottom_zone_height)
        bottom = float(final[mask].max()) if mask.any() else 0.0
        if bottom >= th.bottom_zone_limit:
            masked = np.where(mask, final, -np.inf)
            viol.append(CriterionViolation("bottom_zone", (_worst(trace, masked),), settle_frame,
                                           bottom, th.bottom_zone_limit))

    max_strain = 0.0
    if wrap_strains is not None and len(wrap_strains.max_strain):
        ms = np.asarray(wrap_strains.max_strain)
        max_strain = float(ms.max())
        hits = np.flatnonzero(ms >= tear_threshold)
        if len(hits):
            f = int(hits[np.argmax(ms[hits])])
            viol.append(CriterionViolation("wrap_integrity", (f"edge{int(wrap_strains.max_edge[f])}",),
                                           f, float(ms[f]), float(tear_threshold)))

    if settle_frame is None:
        outcome = INCONCLUSIVE
    else:
        outcome = FAILURE if viol else SUCCESS
    return ValidationReport(outcome, elastic / H, perm, bottom, max_strain, tuple(viol), settle_frame)
