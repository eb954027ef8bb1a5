"""Rigid-body world state and the fixed-timestep stepping pipeline."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..errors import FatalNumeric, PalletbenchError
from . import _kernels as K

GRAVITY = np.array([0.0, 0.0, -9.81])
CONTACT_TOL = 1e-7  # m, touching faces count as contact
CONTACT_MARGIN = 0.001  # m, speculative contact distance used by the solver
WARM_RADIUS = 0.01  # m, cached point match distance in body-A frame
MAX_BIAS = 1.0  # m/s


class UnknownBody(PalletbenchError, KeyError):
    pass


@dataclass(frozen=True)
class Contact:
    body_a: str
    body_b: str
    point: np.ndarray
    normal: np.ndarray
    penetration: float
    combined_friction: float


@dataclass
class ContactSet:
    """Structure-of-arrays contact batch; ``a``/``b`` are body indices."""

    a: np.ndarray
    b: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    depth: np.ndarray
    mu: np.ndarray
    lam_n: np.ndarray
    lam_t: np.ndarray

    def __len__(self) -> int:
        return len(self.a)

    @classmethod
    def empty(cls) -> "ContactSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, 3)),
                   np.zeros((0, 3)), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, 3)))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) unit quaternions (w, x, y, z) -> (..., 3, 3) rotation matrices."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def box_inertia(mass: float, half_extents) -> np.ndarray:
    """Principal moments of a solid box."""
    dx, dy, dz = 2 * np.asarray(half_extents, float)
    return mass / 12.0 * np.array([dy * dy + dz * dz, dx * dx + dz * dz, dx * dx + dy * dy])


def box_corners(pos: np.ndarray, quat: np.ndarray, half: np.ndarray) -> np.ndarray:
    """(n, 8, 3) world corners of n boxes."""
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    R = quat_to_matrix(quat)
    local = signs[None, :, :] * half[:, None, :]
    return pos[:, None, :] + np.einsum("nij,nkj->nki", R, local)


class World:
    """Dynamic state of every rigid body plus solver settings.

    Bodies are stored in insertion order, which is also the canonical solver
    order. Kinematic bodies have zero inverse mass and are moved only by
    whoever sets their velocity (see :mod:`palletbench.bench`).
    """

    def __init__(self, gravity=GRAVITY, iterations: int = 40, baumgarte: float = 0.2,
                 slop: float = 0.001):
        self.gravity = np.array(gravity, float)
        self.iterations = int(iterations)
        self.baumgarte = float(baumgarte)
        self.slop = float(slop)
        self.ids: list[str] = []
        self.roles: list[str] = []
        self._index: dict[str, int] = {}
        self.half = np.zeros((0, 3))
        self.mass = np.zeros(0)
        self.inertia = np.zeros((0, 3))
        self.kinematic = np.zeros(0, bool)
        self.friction = np.zeros(0)
        self.pos = np.zeros((0, 3))
        self.quat = np.zeros((0, 4))
        self.vel = np.zeros((0, 3))
        self.omega = np.zeros((0, 3))
        self.force = np.zeros((0, 3))
        self.torque = np.zeros((0, 3))
        self.step_count = 0
        self.time = 0.0
        self._cache: tuple | None = None
        self.contacts = ContactSet.empty()

    # -- construction -----------------------------------------------------

    def add_body(self, body_id: str, half_extents, mass: float = 1.0, *, role: str = "package",
                 pos=(0, 0, 0), quat=(1, 0, 0, 0), vel=(0, 0, 0), omega=(0, 0, 0),
                 friction: float = 0.5, kinematic: bool = False) -> int:
        if body_id in self._index:
            raise ValueError(f"duplicate body id {body_id!r}")
        half = np.asarray(half_extents, float)
        q = np.asarray(quat, float)
        q = q / np.linalg.norm(q)
        self._index[body_id] = len(self.ids)
        self.ids.append(body_id)
        self.roles.append(role)
        self.half = np.vstack([self.half, half])
        self.mass = np.append(self.mass, float(mass))
        self.inertia = np.vstack([self.inertia, box_inertia(mass, half)])
        self.kinematic = np.append(self.kinematic, bool(kinematic))
        self.friction = np.append(self.friction, float(friction))
        self.pos = np.vstack([self.pos, np.asarray(pos, float)])
        self.quat = np.vstack([self.quat, q])
        self.vel = np.vstack([self.vel, np.asarray(vel, float)])
        self.omega = np.vstack([self.omega, np.asarray(omega, float)])
        self.force = np.vstack([self.force, np.zeros(3)])
        self.torque = np.vstack([self.torque, np.zeros(3)])
        return len(self.ids) - 1

    def index(self, body_id: str) -> int:
        try:
            return self._index[body_id]
        except KeyError:
            raise UnknownBody(body_id) from None

    def copy(self) -> "World":
        return copy.deepcopy(self)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def inv_mass(self) -> np.ndarray:
        return np.where(self.kinematic, 0.0, 1.0 / self.mass)

    @property
    def rotations(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def inv_inertia_world(self, R: np.ndarray | None = None) -> np.ndarray:
        R = self.rotations if R is None else R
        inv = np.where(self.kinematic[:, None], 0.0, 1.0 / self.inertia)
        return np.einsum("nij,nj,nkj->nik", R, inv, R)

    def inertia_world(self, R: np.ndarray | None = None) -> np.ndarray:
        R = self.rotations if R is None else R
        return np.einsum("nij,nj,nkj->nik", R, self.inertia, R)

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        ext = np.einsum("nij,nj->ni", np.abs(self.rotations), self.half)
        return self.pos - ext, self.pos + ext

    def angular_momentum(self) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.inertia_world(), self.omega)

    def state_arrays(self) -> tuple[np.ndarray, ...]:
        return self.pos, self.quat, self.vel, self.omega


# -- narrow/broad phase -------------------------------------------------------


def _candidate_pairs(world: World, margin: float) -> np.ndarray:
    lo, hi = world.aabb()
    n = world.n
    if n < 2:
        return np.zeros((0, 2), np.int64)
    i, j = np.triu_indices(n, 1)
    overlap = np.all((lo[i] <= hi[j] + margin) & (lo[j] <= hi[i] + margin), axis=1)
    movable = ~(world.kinematic[i] & world.kinematic[j])
    keep = overlap & movable
    return np.ascontiguousarray(np.stack([i[keep], j[keep]], axis=1).astype(np.int64))


def _detect(world: World, margin: float = CONTACT_MARGIN) -> ContactSet:
    pairs = _candidate_pairs(world, margin)
    cap = 4 * len(pairs)
    a = np.empty(cap, np.int64)
    b = np.empty(cap, np.int64)
    pt = np.empty((cap, 3))
    nrm = np.empty((cap, 3))
    dep = np.empty(cap)
    if cap:
        m = K.detect_pairs(pairs, np.ascontiguousarray(world.pos), np.ascontiguousarray(world.rotations),
                           np.ascontiguousarray(world.half), margin, a, b, pt, nrm, dep)
    else:
        m = 0
    mu = np.sqrt(world.friction[a[:m]] * world.friction[b[:m]])
    return ContactSet(a[:m], b[:m], pt[:m], nrm[:m], dep[:m], mu, np.zeros(m), np.zeros((m, 3)))


def detect_contacts(world: World) -> list[Contact]:
    """Touching or overlapping box pairs of the current poses as public
    records (speculative points are left out)."""
    cs = _detect(world, CONTACT_TOL)
    ids = world.ids
    return [Contact(ids[cs.a[k]], ids[cs.b[k]], cs.point[k].copy(), cs.normal[k].copy(),
                    max(float(cs.depth[k]), 0.0), float(cs.mu[k]))
            for k in range(len(cs)) if cs.depth[k] >= -CONTACT_TOL]


def _contact_set(world: World, contacts) -> ContactSet:
    if isinstance(contacts, ContactSet):
        return contacts
    contacts = list(contacts)
    if not contacts:
        return ContactSet.empty()
    a = np.array([world.index(c.body_a) for c in contacts], np.int64)
    b = np.array([world.index(c.body_b) for c in contacts], np.int64)
    return ContactSet(a, b, np.array([c.point for c in contacts], float),
                      np.array([c.normal for c in contacts], float),
                      np.array([c.penetration for c in contacts], float),
                      np.array([c.combined_friction for c in contacts], float),
                      np.zeros(len(a)), np.zeros((len(a), 3)))


def _pair_codes(world: World, cs: ContactSet) -> np.ndarray:
    return cs.a.astype(np.int64) * world.n + cs.b.astype(np.int64)


def _warm_start(world: World, cs: ContactSet, R: np.ndarray) -> None:
    if _cache_empty(world) or not len(cs):
        return
    old_code, old_local, old_ln, old_lt = world._cache
    code = _pair_codes(world, cs)
    local = np.einsum("nji,nj->ni", R[cs.a], cs.point - world.pos[cs.a])
    K.match_warm_start(code, np.ascontiguousarray(local), old_code, old_local, old_ln, old_lt,
                       WARM_RADIUS, cs.lam_n, cs.lam_t)


def _cache_empty(world: World) -> bool:
    return world._cache is None or len(world._cache[0]) == 0


def _store_cache(world: World, cs: ContactSet, R: np.ndarray) -> None:
    code = _pair_codes(world, cs)
    local = np.einsum("nji,nj->ni", R[cs.a], cs.point - world.pos[cs.a])
    order = np.argsort(code, kind="stable")
    world._cache = (np.ascontiguousarray(code[order]), np.ascontiguousarray(local[order]),
                    np.ascontiguousarray(cs.lam_n[order]), np.ascontiguousarray(cs.lam_t[order]))


def resolve_contacts(world: World, contacts, iterations: int | None = None,
                     dt: float = 1.0 / 240.0) -> ContactSet:
    """Apply contact and friction impulses in place; returns the batch with
    its accumulated impulses (``lam_n``, ``lam_t``)."""
    cs = _contact_set(world, contacts)
    if not len(cs):
        return cs
    iterations = world.iterations if iterations is None else iterations
    R = world.rotations
    K.solve_contacts(cs.a, cs.b, np.ascontiguousarray(cs.point), np.ascontiguousarray(cs.normal),
                     cs.depth, cs.mu, cs.lam_n, cs.lam_t, np.ascontiguousarray(world.pos),
                     world.vel, world.omega, world.inv_mass,
                     np.ascontiguousarray(world.inv_inertia_world(R)), float(dt), int(iterations),
                     world.baumgarte, world.slop, MAX_BIAS)
    return cs


# -- forces and integration ---------------------------------------------------


def apply_external(world: World, body_id: str, force) -> World:
    f = np.asarray(force, float)
    if f.shape != (3,) or not np.all(np.isfinite(f)):
        raise ValueError(f"force must be a finite 3-vector, got {force!r}")
    world.force[world.index(body_id)] += f
    return world


def _apply_externals(world: World, externals) -> None:
    if externals is None:
        return
    if isinstance(externals, Mapping):
        for body_id, f in externals.items():
            apply_external(world, body_id, f)
        return
    arr = np.asarray(externals, float)
    if arr.shape != world.force.shape or not np.all(np.isfinite(arr)):
        raise ValueError("external force array must be finite with shape (n_bodies, 3)")
    world.force += arr


def _check_finite(world: World) -> None:
    bad = ~(np.all(np.isfinite(world.pos), 1) & np.all(np.isfinite(world.quat), 1)
            & np.all(np.isfinite(world.vel), 1) & np.all(np.isfinite(world.omega), 1))
    if bad.any():
        raise FatalNumeric(f"body {world.ids[int(np.flatnonzero(bad)[0])]}")


def integrate_velocities(world: World, dt: float) -> None:
    dyn = ~world.kinematic
    world.vel[dyn] += (world.force[dyn] / world.mass[dyn, None] + world.gravity) * dt
    if np.any(world.torque[dyn]):
        invI = world.inv_inertia_world()
        world.omega[dyn] += np.einsum("nij,nj->ni", invI[dyn], world.torque[dyn]) * dt


def integrate_positions(world: World, dt: float) -> None:
    world.pos += world.vel * dt
    spin = np.any(world.omega != 0.0, axis=1)
    if not spin.any():
        return
    R0 = quat_to_matrix(world.quat[spin])
    inertia = world.inertia[spin]
    L = np.einsum("nij,nj,nkj,nk->ni", R0, inertia, R0, world.omega[spin])
    q = world.quat[spin]
    w = world.omega[spin]
    dq = 0.5 * dt * np.stack([
        -(w[:, 0] * q[:, 1] + w[:, 1] * q[:, 2] + w[:, 2] * q[:, 3]),
        w[:, 0] * q[:, 0] + w[:, 1] * q[:, 3] - w[:, 2] * q[:, 2],
        -w[:, 0] * q[:, 3] + w[:, 1] * q[:, 0] + w[:, 2] * q[:, 1],
        w[:, 0] * q[:, 2] - w[:, 1] * q[:, 1] + w[:, 2] * q[:, 0],
    ], axis=1)
    q = q + dq
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    world.quat[spin] = q
    # carry angular momentum across the orientation change (torque-free precession)
    dyn = ~world.kinematic[spin]
    R1 = quat_to_matrix(q)
    omega_new = np.einsum("nij,nj,nkj,nk->ni", R1, 1.0 / inertia, R1, L)
    idx = np.flatnonzero(spin)[dyn]
    world.omega[idx] = omega_new[dyn]


def _clear_forces(world: World) -> None:
    world.force[:] = 0.0
    world.torque[:] = 0.0


def _advance_clock(world: World, dt: float) -> None:
    world.step_count += 1
    world.time = world.step_count * dt


def integrate(world: World, dt: float) -> World:
    """Semi-implicit Euler for every body: v += (F/m + g) dt, then x += v dt."""
    integrate_velocities(world, dt)
    integrate_positions(world, dt)
    _clear_forces(world)
    _check_finite(world)
    _advance_clock(world, dt)
    return world


def step(world: World, dt: float, externals=None) -> World:
    """One fixed step: externals, velocity update, contacts, position update.

    Gravity and external forces enter the velocities before the contact
    solve so resting contacts see (and cancel) the weight in the same step.
    """
    _apply_externals(world, externals)
    integrate_velocities(world, dt)
    cs = _detect(world)
    R = world.rotations
    _warm_start(world, cs, R)
    resolve_contacts(world, cs, dt=dt)
    _store_cache(world, cs, R)
    world.contacts = cs
    integrate_positions(world, dt)
    _clear_forces(world)
    _check_finite(world)
    _advance_clock(world, dt)
    return world


def bodies_by_role(world: World, role: str) -> list[int]:
    return [i for i, r in enumerate(world.roles) if r == role]


def kinetic_energy(world: World, which: Iterable[int] | None = None) -> float:
    idx = np.arange(world.n) if which is None else np.asarray(list(which))
    idx = idx[~world.kinematic[idx]]
    lin = 0.5 * np.sum(world.mass[idx] * np.sum(world.vel[idx] ** 2, axis=1))
    Iw = world.inertia_world()[idx]
    ang = 0.5 * np.einsum("ni,nij,nj->", world.omega[idx], Iw, world.omega[idx])
    return float(lin + ang)
