"""Scene construction (sleigh, pallet, packages, fields, wrap) and integrity checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import MM, PalletizingSchema, SimulationParameters, check_schema
from .dynamics.world import World, box_inertia, detect_contacts
from .restraint import PerimeterField, base_strength, place_fields
from .wrap import ClothMesh, generate_wrap

SEED_GAP = 1e-4  # m between stacked surfaces at t=0
SLEIGH_THICKNESS = 0.1  # m
# m of sleigh beyond the pallet on every side; large enough that anything
# falling off the unit still lands on the sleigh
SLEIGH_MARGIN = 10.0
INITIAL_PENETRATION_TOL = 5e-4  # m
SUPPORT_GAP_TOL = 5e-4  # m
RUNTIME_PENETRATION_TOL = 0.05  # m
QUAT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FrameRecord:
    """Immutable copy of the dynamic state at one instant."""

    t: float
    step: int
    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    omega: np.ndarray
    wrap_vertices: np.ndarray | None = None

    def __post_init__(self):
        for name in ("pos", "quat", "vel", "omega", "wrap_vertices"):
            a = getattr(self, name)
            if a is not None:
                a.setflags(write=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameRecord):
            return NotImplemented
        if (self.wrap_vertices is None) != (other.wrap_vertices is None):
            return False
        same = self.t == other.t and self.step == other.step and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("pos", "quat", "vel", "omega"))
        if same and self.wrap_vertices is not None:
            same = np.array_equal(self.wrap_vertices, other.wrap_vertices)
        return bool(same)

    __hash__ = None


@dataclass
class Scene:
    world: World
    fields: tuple[PerimeterField, ...]
    wrap: ClothMesh | None
    unit_height: float  # m, pallet included
    total_cargo_mass: float  # kg
    package_idx: np.ndarray
    pallet_idx: int
    sleigh_idx: int
    cargo_aabb: tuple[np.ndarray, np.ndarray]  # pallet frame
    params: SimulationParameters
    initial: FrameRecord | None = None
    layer_of: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def package_ids(self) -> list[str]:
        return [self.world.ids[i] for i in self.package_idx]

    @property
    def n_packages(self) -> int:
        return len(self.package_idx)

    @property
    def pallet_pose(self) -> tuple[np.ndarray, np.ndarray]:
        i = self.pallet_idx
        return self.world.pos[i].copy(), self.world.rotations[i]

    def colliders(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.package_idx
        return self.world.pos[idx], self.world.rotations[idx], self.world.half[idx]


def package_id(layer: int, slot: int) -> str:
    return f"L{layer:02d}P{slot:02d}"


def build_scene(schema: PalletizingSchema, params: SimulationParameters, *,
                check: bool = True) -> Scene:
    """Deterministic construction of the world for ``schema`` under ``params``.

    Surfaces are seeded ``SEED_GAP`` apart so nothing starts in contact
    overlap; quarter-turn placements are realised by swapping the footprint
    extents of an axis-aligned box. ``check=False`` skips the schema
    invariants so that a broken layout can be handed to
    :func:`verify_integrity`.
    """
    if check:
        check_schema(schema)
    eng = params.engine
    world = World(iterations=eng.solver_iterations, baumgarte=eng.baumgarte, slop=eng.slop)

    pdx, pdy, pdz = schema.pallet.dims_m
    sl_half = (pdx / 2 + SLEIGH_MARGIN, pdy / 2 + SLEIGH_MARGIN, SLEIGH_THICKNESS / 2)
    sleigh = world.add_body("sleigh", sl_half, 1.0, role="sleigh", pos=(0, 0, -SLEIGH_THICKNESS / 2),
                            friction=eng.sleigh_friction, kinematic=True)
    pallet_z = SEED_GAP + pdz / 2
    pallet = world.add_body("pallet", (pdx / 2, pdy / 2, pdz / 2), schema.pallet.mass, role="pallet",
                            pos=(0, 0, pallet_z), friction=schema.pallet.friction)

    idx, layers = [], []
    base = SEED_GAP + pdz
    for li, layer in enumerate(schema.layers):
        base += SEED_GAP
        for si, pl in enumerate(layer.placements):
            spec = schema.package(pl)
            dx, dy, dz = spec.dims_m
            if pl.rot % 180 == 90:
                dx, dy = dy, dx
            i = world.add_body(package_id(li, si), (dx / 2, dy / 2, dz / 2), spec.mass,
                               pos=(pl.x * MM, pl.y * MM, base + dz / 2), friction=spec.friction)
            idx.append(i)
            layers.append(li)
        base += schema.layer_height(li) * MM

    idx = np.array(idx, np.int64)
    lo = (world.pos[idx] - world.half[idx]).min(axis=0)
    hi = (world.pos[idx] + world.half[idx]).max(axis=0)
    p0 = world.pos[pallet]
    cargo = (lo - p0, hi - p0)

    total = float(world.mass[idx].sum())
    f_base = base_strength(params.tension_T, total, params.conditions.accel)
    fields = place_fields(cargo, params.field_offset_d, params.field_range_dmax, f_base, params.sigma_h)

    wrap = None
    cl = params.cloth
    if cl.enabled:
        t = cl.thickness
        wlo = lo - (t, t, 0.0)
        whi = hi + (t, t, t if cl.full_enclosure else 0.0)
        wrap = generate_wrap((wlo, whi), cl.resolution, cl.overlap, thickness=t,
                             area_density=cl.area_density, stiffness=cl.stiffness,
                             damping=cl.damping, full_enclosure=cl.full_enclosure,
                             pallet_pose=(world.pos[pallet].copy(), world.rotations[pallet]))

    scene = Scene(world, fields, wrap, schema.unit_height * MM, total, idx, pallet, sleigh,
                  cargo, params, layer_of=np.array(layers, np.int64))
    scene.initial = snapshot(scene)
    return scene


def snapshot(scene: Scene) -> FrameRecord:
    w = scene.world
    wv = scene.wrap.x.copy() if scene.wrap is not None else None
    return FrameRecord(float(w.time), int(w.step_count), w.pos.copy(), w.quat.copy(),
                       w.vel.copy(), w.omega.copy(), wv)


# -- integrity ------------------------------------------------------------------


@dataclass(frozen=True)
class IntegrityIssue:
    code: str
    ids: tuple[str, ...] = ()
    detail: str = ""

    def __str__(self) -> str:
        who = "/".join(self.ids)
        return f"{self.code}({who})" + (f": {self.detail}" if self.detail else "")


@dataclass(frozen=True)
class IntegrityReport:
    issues: tuple[IntegrityIssue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> list[str]:
        return [i.code for i in self.issues]

    def __bool__(self) -> bool:
        return self.ok


def verify_integrity(scene: Scene, *, initial: bool = True) -> IntegrityReport:
    """Check the scene. ``initial=True`` runs the t=0 checks (tight
    penetration and support tolerances, wrap enclosure); otherwise only the
    checks meaningful mid-run are applied."""
    w = scene.world
    issues: list[IntegrityIssue] = []
    for role in ("sleigh", "pallet"):
        n = w.roles.count(role)
        if n != 1:
            issues.append(IntegrityIssue("RoleCount", (role,), f"{n} bodies"))
    finite = (np.all(np.isfinite(w.pos), 1) & np.all(np.isfinite(w.quat), 1)
              & np.all(np.isfinite(w.vel), 1) & np.all(np.isfinite(w.omega), 1))
    for i in np.flatnonzero(~finite):
        issues.append(IntegrityIssue("NonFiniteState", (w.ids[i],)))
    qn = np.abs(np.linalg.norm(w.quat, axis=1) - 1.0)
    for i in np.flatnonzero(finite & (qn > QUAT_TOL)):
        issues.append(IntegrityIssue("QuaternionNotNormalized", (w.ids[i],), f"{qn[i]:.3e}"))
    for i in range(w.n):
        if not np.allclose(w.inertia[i], box_inertia(w.mass[i], w.half[i]), rtol=1e-12, atol=0):
            issues.append(IntegrityIssue("InertiaMismatch", (w.ids[i],)))
    msum = float(w.mass[scene.package_idx].sum())
    if not np.isclose(msum, scene.total_cargo_mass, rtol=1e-12):
        issues.append(IntegrityIssue("CargoMassMismatch", (), f"{msum} != {scene.total_cargo_mass}"))

    if not finite.all():
        return IntegrityReport(tuple(issues))

    tol = INITIAL_PENETRATION_TOL if initial else RUNTIME_PENETRATION_TOL
    deepest: dict[tuple[str, str], float] = {}
    for c in detect_contacts(w):
        key = (c.body_a, c.body_b)
        deepest[key] = max(deepest.get(key, 0.0), c.penetration)
    for key, depth in sorted(deepest.items()):
        if depth > tol:
            issues.append(IntegrityIssue("InitialPenetration" if initial else "DeepPenetration",
                                         key, f"{depth * 1000:.3f} mm"))

    if initial:
        issues.extend(_support_issues(scene))
        wrap = scene.wrap
        if wrap is not None:
            if not np.all(np.isfinite(wrap.x)):
                issues.append(IntegrityIssue("NonFiniteState", ("wrap",)))
            else:
                lo, hi = scene.cargo_aabb
                p0 = w.pos[scene.pallet_idx]
                wl = wrap.x.min(axis=0) - p0
                wh = wrap.x.max(axis=0) - p0
                if np.any(wl[:2] > lo[:2] + 1e-9) or np.any(wh[:2] < hi[:2] - 1e-9):
                    issues.append(IntegrityIssue("WrapNotEnclosing", ("wrap",)))
    elif scene.wrap is not None and not np.all(np.isfinite(scene.wrap.x)):
        issues.append(IntegrityIssue("NonFiniteState", ("wrap",)))
    return IntegrityReport(tuple(issues))


def _support_issues(scene: Scene) -> list[IntegrityIssue]:
    """Every dynamic body must sit within SUPPORT_GAP_TOL of something below."""
    w = scene.world
    lo, hi = w.aabb()
    out = []
    for i in [scene.pallet_idx, *scene.package_idx.tolist()]:
        below = [j for j in range(w.n) if j != i
                 and lo[j, 0] < hi[i, 0] and lo[i, 0] < hi[j, 0]
                 and lo[j, 1] < hi[i, 1] and lo[i, 1] < hi[j, 1]
                 and hi[j, 2] <= lo[i, 2] + INITIAL_PENETRATION_TOL]
        gap = lo[i, 2] - max((hi[j, 2] for j in below), default=-np.inf)
        if gap > SUPPORT_GAP_TOL:
            out.append(IntegrityIssue("UnsupportedBody", (w.ids[i],), f"gap {gap * 1000:.3f} mm"))
    return out
