"""Wrapping film as a position-based cloth, driven one-way by the rigid bodies.

The mesh is a vertical band laid on the cargo bounding box (optionally with
a top cap), with its bottom ring pinned to the pallet. Each step does a
Verlet update relative to the pallet motion, a fixed number of Jacobi
distance-constraint sweeps, a push-out from every box collider, and a snap
of the pinned ring. Rigid state is only ever read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import FatalNumeric

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@dataclass
class ClothMesh:
    x: np.ndarray  # (n, 3) positions, world frame
    x_prev: np.ndarray  # (n, 3) positions one step ago
    mass: np.ndarray  # (n,)
    edges: np.ndarray  # (m, 2) int64
    rest: np.ndarray  # (m,)
    stiffness: np.ndarray  # (m,)
    pinned: np.ndarray  # (k,) vertex ids
    pinned_local: np.ndarray  # (k, 3) pinned positions in the pallet frame
    thickness: float = 0.002
    damping: float = 0.02
    ring: int = 0  # vertices per horizontal ring
    rows: int = 0
    edge_kind: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))

    @property
    def n_vertices(self) -> int:
        return len(self.x)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def copy(self) -> "ClothMesh":
        return ClothMesh(self.x.copy(), self.x_prev.copy(), self.mass.copy(), self.edges.copy(),
                         self.rest.copy(), self.stiffness.copy(), self.pinned.copy(),
                         self.pinned_local.copy(), self.thickness, self.damping, self.ring,
                         self.rows, self.edge_kind.copy())


@dataclass(frozen=True)
class StrainField:
    strain: np.ndarray  # per edge
    edges: np.ndarray  # (m, 2), for adjacency
    threshold: float | None = None

    @property
    def max_strain(self) -> float:
        return float(self.strain.max()) if len(self.strain) else 0.0

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.strain)) if len(self.strain) else -1

    @property
    def stressed_edges(self) -> np.ndarray:
        if self.threshold is None:
            return np.zeros(0, np.int64)
        return np.flatnonzero(self.strain >= self.threshold)


@dataclass(frozen=True)
class HotspotRegion:
    edges: tuple[int, ...]
    strains: tuple[float, ...]

    @property
    def max_strain(self) -> float:
        return max(self.strains)


# edge kinds
RING, VERTICAL, SHEAR, CAP = 0, 1, 2, 3


def _ring_points(lo: np.ndarray, hi: np.ndarray, res: int) -> np.ndarray:
    """4(res-1) points walking the rectangle counter-clockwise from (lo_x, lo_y)."""
    s = np.linspace(0.0, 1.0, res)[:-1]
    x0, y0, x1, y1 = lo[0], lo[1], hi[0], hi[1]
    sides = [
        np.stack([x0 + (x1 - x0) * s, np.full_like(s, y0)], 1),
        np.stack([np.full_like(s, x1), y0 + (y1 - y0) * s], 1),
        np.stack([x1 - (x1 - x0) * s, np.full_like(s, y1)], 1),
        np.stack([np.full_like(s, x0), y1 - (y1 - y0) * s], 1),
    ]
    return np.concatenate(sides)


def generate_wrap(cargo_aabb, resolution: int = 6, overlap: float = 0.0, *,
                  thickness: float = 0.002, area_density: float = 0.023,
                  stiffness: float = 0.8, damping: float = 0.02, full_enclosure: bool = False,
                  pallet_pose=None) -> ClothMesh:
    """Band of ``resolution`` rows around ``cargo_aabb = (lo, hi)``.

    Each side carries ``resolution`` vertices (shared corners), so a ring has
    ``4 * (resolution - 1)`` vertices. The band runs from ``lo_z - overlap``
    to ``hi_z``; its bottom ring is pinned. ``pallet_pose = (pos, R)`` fixes
    the frame the pins are expressed in (identity if omitted).
    """
    lo, hi = (np.asarray(v, float) for v in cargo_aabb)
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if np.any(hi - lo <= 0) or not np.all(np.isfinite(hi - lo)):
        raise ValueError(f"degenerate cargo bounds {lo} .. {hi}")
    res = int(resolution)
    ring_xy = _ring_points(lo, hi, res)
    nr = len(ring_xy)
    zs = np.linspace(lo[2] - overlap, hi[2], res)
    verts = [np.column_stack([ring_xy, np.full(nr, z)]) for z in zs]
    edges: list[tuple[int, int, int]] = []

    def vid(r, c):
        return r * nr + (c % nr)

    for r in range(res):
        for c in range(nr):
            edges.append((vid(r, c), vid(r, c + 1), RING))
            if r + 1 < res:
                edges.append((vid(r, c), vid(r + 1, c), VERTICAL))
                edges.append((vid(r, c), vid(r + 1, c + 1), SHEAR))
                edges.append((vid(r, c + 1), vid(r + 1, c), SHEAR))

    if full_enclosure:
        # cap grid whose boundary is the top ring
        base = res * nr
        grid = -np.ones((res, res), np.int64)
        top = (res - 1) * nr
        for c in range(nr):
            if c < res - 1:
                i, j = c, 0
            elif c < 2 * (res - 1):
                i, j = res - 1, c - (res - 1)
            elif c < 3 * (res - 1):
                i, j = res - 1 - (c - 2 * (res - 1)), res - 1
            else:
                i, j = 0, res - 1 - (c - 3 * (res - 1))
            grid[i, j] = top + c
        interior = []
        for i in range(1, res - 1):
            for j in range(1, res - 1):
                grid[i, j] = base + len(interior)
                interior.append((lo[0] + (hi[0] - lo[0]) * i / (res - 1),
                                 lo[1] + (hi[1] - lo[1]) * j / (res - 1), hi[2]))
        if interior:
            verts.append(np.array(interior))
        for i in range(res):
            for j in range(res):
                if i + 1 < res and not (j in (0, res - 1)):
                    edges.append((grid[i, j], grid[i + 1, j], CAP))
                if j + 1 < res and not (i in (0, res - 1)):
                    edges.append((grid[i, j], grid[i, j + 1], CAP))
                if i + 1 < res and j + 1 < res:
                    edges.append((grid[i, j], grid[i + 1, j + 1], CAP))
                    edges.append((grid[i + 1, j], grid[i, j + 1], CAP))

    x = np.concatenate(verts)
    e = np.array([(a, b) for a, b, _ in edges], np.int64)
    kind = np.array([k for _, _, k in edges], np.int8)
    rest = np.linalg.norm(x[e[:, 1]] - x[e[:, 0]], axis=1)

    size = hi - lo
    area = 2 * (size[0] + size[1]) * (size[2] + overlap)
    if full_enclosure:
        area += size[0] * size[1]
    mass = np.full(len(x), area_density * area / len(x))

    pinned = np.arange(nr, dtype=np.int64)
    if pallet_pose is None:
        p0, R = np.zeros(3), np.eye(3)
    else:
        p0, R = (np.asarray(v, float) for v in pallet_pose)
    pinned_local = (x[pinned] - p0) @ R
    return ClothMesh(x, x.copy(), mass, e, rest, np.full(len(e), float(stiffness)), pinned,
                     pinned_local, float(thickness), float(damping), nr, res, kind)


def band_perimeter(mesh: ClothMesh, row: int = 0) -> float:
    ring = mesh.x[row * mesh.ring:(row + 1) * mesh.ring]
    return float(np.sum(np.linalg.norm(np.roll(ring, -1, axis=0) - ring, axis=1)))


@njit(cache=True)
def _project(x, edges, rest, weight, inv_m, iterations, max_err):
    """Jacobi distance-constraint sweeps, corrections averaged per vertex."""
    n = x.shape[0]
    m = edges.shape[0]
    acc = np.zeros((n, 3))
    cnt = np.zeros(n)
    for it in range(iterations):
        acc[:] = 0.0
        cnt[:] = 0.0
        err = 0.0
        for e in range(m):
            i = edges[e, 0]
            j = edges[e, 1]
            wsum = inv_m[i] + inv_m[j]
            if wsum == 0.0:
                continue
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            ln = np.sqrt(dx * dx + dy * dy + dz * dz)
            if ln == 0.0:
                continue
            c = ln - rest[e]
            if abs(c) > err:
                err = abs(c)
            s = weight[e] * c / (ln * wsum)
            acc[i, 0] += s * inv_m[i] * dx
            acc[i, 1] += s * inv_m[i] * dy
            acc[i, 2] += s * inv_m[i] * dz
            acc[j, 0] -= s * inv_m[j] * dx
            acc[j, 1] -= s * inv_m[j] * dy
            acc[j, 2] -= s * inv_m[j] * dz
            cnt[i] += 1.0
            cnt[j] += 1.0
        max_err[it] = err
        for v in range(n):
            if cnt[v] > 0.0:
                x[v, 0] += acc[v, 0] / cnt[v]
                x[v, 1] += acc[v, 1] / cnt[v]
                x[v, 2] += acc[v, 2] / cnt[v]


@njit(cache=True)
def _push_out(x, free, pos, rot, half, thickness):
    """Move vertices found inside an inflated box to its nearest face."""
    for v in range(x.shape[0]):
        if not free[v]:
            continue
        for b in range(pos.shape[0]):
            local = np.zeros(3)
            for k in range(3):
                s = 0.0
                for r in range(3):
                    s += rot[b, r, k] * (x[v, r] - pos[b, r])
                local[k] = s
            best = -1
            bestgap = 1e300
            for k in range(3):
                gap = half[b, k] + thickness - abs(local[k])
                if gap <= 0.0:
                    best = -1
                    break
                if gap < bestgap:
                    bestgap = gap
                    best = k
            if best < 0:
                continue
            local[best] = (half[b, best] + thickness) * (1.0 if local[best] >= 0.0 else -1.0)
            for r in range(3):
                s = pos[b, r]
                for k in range(3):
                    s += rot[b, r, k] * local[k]
                x[v, r] = s


def project_constraints(mesh: ClothMesh, iterations: int = 8) -> np.ndarray:
    """Run the distance-constraint sweeps in place; returns the max absolute
    length error seen at the start of each sweep."""
    inv_m = np.where(np.isin(np.arange(mesh.n_vertices), mesh.pinned), 0.0, 1.0 / mesh.mass)
    err = np.zeros(iterations)
    _project(mesh.x, mesh.edges, mesh.rest, mesh.stiffness, inv_m, int(iterations), err)
    return err


def pin_positions(mesh: ClothMesh, pallet_pos, pallet_R) -> np.ndarray:
    return np.asarray(pallet_pos, float) + mesh.pinned_local @ np.asarray(pallet_R, float).T


def step_cloth(mesh: ClothMesh, colliders, gravity, dt: float, *, pallet_pose=None,
               pallet_velocity=None, iterations: int = 8) -> ClothMesh:
    """Advance the cloth one step in place.

    ``colliders`` is ``(pos (n,3), R (n,3,3), half (n,3))``; these arrays are
    only read. ``pallet_pose = (pos, R)`` drives the pins and
    ``pallet_velocity`` is the reference for damping.
    """
    g = np.asarray(gravity, float)
    free = np.ones(mesh.n_vertices, bool)
    free[mesh.pinned] = False
    vref = np.zeros(3) if pallet_velocity is None else np.asarray(pallet_velocity, float)
    vel = mesh.x - mesh.x_prev
    rel = vel - vref * dt
    new = mesh.x + vref * dt + (1.0 - mesh.damping) * rel + g * dt * dt
    mesh.x_prev = mesh.x.copy()
    mesh.x = np.where(free[:, None], new, mesh.x)
    if pallet_pose is not None:
        mesh.x[mesh.pinned] = pin_positions(mesh, *pallet_pose)
    project_constraints(mesh, iterations)
    if colliders is not None:
        pos, R, half = colliders
        if len(pos):
            _push_out(mesh.x, free, np.ascontiguousarray(pos, float), np.ascontiguousarray(R, float),
                      np.ascontiguousarray(half, float), mesh.thickness)
    if pallet_pose is not None:
        mesh.x[mesh.pinned] = pin_positions(mesh, *pallet_pose)
    bad = ~np.all(np.isfinite(mesh.x), axis=1)
    if bad.any():
        raise FatalNumeric(f"wrap vertex {int(np.flatnonzero(bad)[0])}")
    return mesh


def compute_strain(mesh: ClothMesh, threshold: float | None = None) -> StrainField:
    ln = np.linalg.norm(mesh.x[mesh.edges[:, 1]] - mesh.x[mesh.edges[:, 0]], axis=1)
    return StrainField((ln - mesh.rest) / mesh.rest, mesh.edges, threshold)


def stress_report(strain: StrainField, tear_threshold: float) -> list[HotspotRegion]:
    """Edges at or above ``tear_threshold`` grouped into regions of edges that
    share a vertex, largest strain first."""
    hot = np.flatnonzero(strain.strain >= tear_threshold)
    if not len(hot):
        return []
    e = strain.edges[hot]
    n = int(strain.edges.max()) + 1
    adj = coo_matrix((np.ones(len(hot)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, label = connected_components(adj, directed=False)
    groups: dict[int, list[int]] = {}
    for k, eid in enumerate(hot):
        groups.setdefault(int(label[e[k, 0]]), []).append(int(eid))
    regions = [HotspotRegion(tuple(ids), tuple(float(strain.strain[i]) for i in ids))
               for ids in groups.values()]
    regions.sort(key=lambda r: (-r.max_strain, r.edges[0]))
    return regions
