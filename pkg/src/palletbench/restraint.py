"""Perimeter force fields standing in for the restraint of the wrapping.

Four fields sit on the vertical sides of the cargo bounding box, offset
outward by ``d_offset``. A field only acts on a package once that package
has pushed past the initial cargo perimeter on the field's side, and then
pushes it back along the inward normal with

    F = F_base * sigma(h) * falloff(d) * m_i / sum(m)

where ``d`` is the distance of the package's outer face to the field plane
and ``falloff(d) = clamp(1 - d / d_max, 0, 1)``. Everything here works in
the pallet frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SigmaProfile
from .dynamics.world import World, box_corners

PERIMETER_DEADBAND = 1e-4  # m a face has to cross before a field engages

# (axis, outward sign) for k = 1..4
_SIDES = ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0))


@dataclass(frozen=True)
class PerimeterField:
    index: int  # 1..4
    axis: int  # 0 = x, 1 = y
    sign: float  # outward direction along axis
    plane: float  # field plane coordinate along axis
    perimeter: float  # initial cargo face coordinate along axis
    F_base: float  # N
    sigma_h: SigmaProfile
    d_max: float  # m
    z_range: tuple[float, float] = (0.0, 1.0)  # cargo bottom/top for height normalisation

    @property
    def inward_normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = -self.sign
        return n

    def height_norm(self, z) -> np.ndarray:
        lo, hi = self.z_range
        return np.clip((np.asarray(z, float) - lo) / (hi - lo), 0.0, 1.0)


def base_strength(T: float, total_mass: float, accel: float) -> float:
    """Side strength F_base = T/4 * total_mass * accel."""
    return T / 4.0 * total_mass * accel


def strength_at_height(field: PerimeterField, h_norm) -> np.ndarray | float:
    return field.F_base * field.sigma_h(h_norm)


def falloff(d, d_max: float):
    return np.clip(1.0 - np.asarray(d, float) / d_max, 0.0, 1.0)


def place_fields(cargo_aabb, d_offset: float, d_max: float, F_base: float,
                 sigma_h: SigmaProfile | None = None) -> tuple[PerimeterField, ...]:
    """One field per vertical side of ``cargo_aabb = (lo, hi)``."""
    if d_offset < 0:
        raise ValueError("d_offset must be non-negative")
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    lo, hi = (np.asarray(v, float) for v in cargo_aabb)
    sigma_h = sigma_h if sigma_h is not None else SigmaProfile()
    fields = []
    for k, (axis, sign) in enumerate(_SIDES, start=1):
        face = hi[axis] if sign > 0 else lo[axis]
        fields.append(PerimeterField(k, axis, sign, float(face + sign * d_offset), float(face),
                                     float(F_base), sigma_h, float(d_max),
                                     (float(lo[2]), float(hi[2]))))
    return tuple(fields)


def field_forces(fields, corners: np.ndarray, centers: np.ndarray,
                 masses: np.ndarray) -> np.ndarray:
    """Per-package restraint forces, (n, 3), in the frame of the fields.

    ``corners`` is (n, 8, 3) and ``centers`` (n, 3), both in that frame.
    """
    corners = np.asarray(corners, float)
    masses = np.asarray(masses, float)
    out = np.zeros((len(masses), 3))
    total = masses.sum()
    if total <= 0 or not len(masses):
        return out
    share = masses / total
    for f in fields:
        outer = f.sign * corners[:, :, f.axis]
        extent = outer.max(axis=1)  # outward-most face, as a signed coordinate
        active = extent > f.sign * f.perimeter + PERIMETER_DEADBAND
        if not active.any():
            continue
        d = f.sign * f.plane - extent
        mag = strength_at_height(f, f.height_norm(centers[:, 2])) * falloff(d, f.d_max) * share
        out[:, f.axis] += np.where(active, -f.sign * mag, 0.0)
    return out


def world_field_forces(world: World, fields, package_idx, pallet_idx: int,
                       masses: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the fields for the packages of ``world`` and return world-frame
    forces. The field frame is the pallet body frame."""
    idx = np.asarray(package_idx)
    R = world.rotations[pallet_idx]
    p0 = world.pos[pallet_idx]
    corners = box_corners(world.pos[idx], world.quat[idx], world.half[idx])
    local_c = (corners - p0) @ R
    local_p = (world.pos[idx] - p0) @ R
    m = world.mass[idx] if masses is None else masses
    return field_forces(fields, local_c, local_p, m) @ R.T
