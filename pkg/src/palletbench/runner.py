"""Single runs, frame export, JSON reports and randomized campaigns."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import __version__
from .bench import MotionProfile, drive_sleigh
from .config import (
    ParameterRanges,
    PalletizingSchema,
    SimulationParameters,
    augment_schema,
    default_params,
    generate_random_params,
    params_from_dict,
    params_to_dict,
    validate_params,
)
from .dynamics.world import box_corners, step
from .errors import IntegrityFailure, InvalidParams, PalletbenchError
from .restraint import world_field_forces
from .scene import FrameRecord, Scene, build_scene, snapshot, verify_integrity
from .validation import (
    CRITERIA,
    INCONCLUSIVE,
    DeformationTrace,
    ValidationReport,
    WrapStrainTrace,
    classify,
    new_trace,
    track,
)
from .wrap import compute_strain, step_cloth

REPORT_VERSION = 1
INTEGRITY_EVERY = 60  # frames between mid-run integrity checks
THREADS_ENV = "PALLETBENCH_THREADS"

FrameSink = Callable[[Scene, FrameRecord, dict], None]


@dataclass
class SimulationResult:
    params: SimulationParameters
    report: ValidationReport
    trace_summary: dict
    timing: dict
    frames: list[FrameRecord] | None = None
    manifest: list[str] = field(default_factory=list)
    error: str | None = None

    @property
    def outcome(self) -> str:
        return self.report.outcome


def steps_per_frame(params: SimulationParameters) -> int:
    return max(1, int(round(1.0 / (params.engine.frame_rate * params.timestep))))


def run_simulation(params: SimulationParameters, *, keep_frames: bool = False,
                   sink: FrameSink | None = None) -> SimulationResult:
    """Build, verify, step until settled (or ``max_duration``), classify.

    Frames are recorded every ``steps_per_frame`` steps. ``sink`` receives
    every frame as it is produced; ``keep_frames`` additionally retains
    them on the result.
    """
    # overlapping placements are left to the integrity check, which reports
    # them as InitialPenetration of the offending pair
    violations = [v for v in validate_params(params) if v.code != "OverlappingPlacements"]
    if violations:
        raise InvalidParams(violations)
    wall0 = time.perf_counter()
    scene = build_scene(params.schema, params, check=False)
    rep = verify_integrity(scene, initial=True)
    if not rep.ok:
        raise IntegrityFailure(rep)

    w = scene.world
    dt = params.timestep
    spf = steps_per_frame(params)
    frame_dt = spf * dt
    profile = MotionProfile.from_conditions(params.conditions)
    th = params.thresholds
    sl, pal, pk = scene.sleigh_idx, scene.pallet_idx, scene.package_idx
    use_fields = params.tension_T > 0 and any(f.F_base > 0 for f in scene.fields)
    wrap = scene.wrap
    tear = params.cloth.tear_threshold
    externals = np.zeros_like(w.force)

    trace = new_trace(scene.package_ids, w.half[pk], float(w.pos[pal, 2] - w.half[pal, 2]), frame_dt)
    strain_max: list[float] = []
    strain_edge: list[int] = []
    frames: list[FrameRecord] = [] if keep_frames else None
    hold_frames = int(round(th.settle_hold / frame_dt))
    max_frames = int(np.floor(params.max_duration / frame_dt + 1e-9))
    calm_run = 0
    settle = None

    def record(frame_idx: int) -> None:
        nonlocal calm_run, settle
        rec = snapshot(scene)
        track(trace, rec.t, rec.pos[pk], rec.quat[pk], rec.vel[pk], rec.omega[pk],
              rec.pos[sl], rec.quat[sl], rec.vel[sl])
        extra = {}
        if wrap is not None:
            sf = compute_strain(wrap)
            strain_max.append(sf.max_strain)
            strain_edge.append(sf.argmax)
            extra = {"max_strain": sf.max_strain, "max_strain_edge": sf.argmax}
        if frames is not None:
            frames.append(rec)
        if sink is not None:
            sink(scene, rec, extra)
        if rec.t >= profile.t_stop - 1e-9:
            calm_run = calm_run + 1 if trace.speed[-1].max() < th.settle_speed_eps else 0
            if calm_run > hold_frames and settle is None:
                settle = frame_idx

    record(0)
    frame = 0
    n_steps = 0
    while settle is None and frame < max_frames:
        for _ in range(spf):
            t = w.step_count * dt
            drive_sleigh(w, profile, t, dt)
            if use_fields:
                externals[pk] = world_field_forces(w, scene.fields, pk, pal)
                step(w, dt, externals)
            else:
                step(w, dt)
            if wrap is not None:
                step_cloth(wrap, scene.colliders(), w.gravity, dt, pallet_pose=scene.pallet_pose,
                           pallet_velocity=w.vel[pal], iterations=params.engine.cloth_iterations)
            n_steps += 1
        frame += 1
        record(frame)
        if frame % INTEGRITY_EVERY == 0:
            rep = verify_integrity(scene, initial=False)
            if not rep.ok:
                raise IntegrityFailure(rep)

    strains = (WrapStrainTrace(np.array(strain_max), np.array(strain_edge, np.int64))
               if wrap is not None else None)
    report = classify(trace, strains, th, scene.unit_height, t_stop=profile.t_stop,
                      tear_threshold=tear, settle_frame=settle)
    summary = {
        "n_frames": trace.n_frames,
        "frame_dt": frame_dt,
        "t_stop": profile.t_stop,
        "settle_frame": settle,
        "unit_height_m": scene.unit_height,
        "max_displacement_m": [float(v) for v in trace.frame_max()],
        "max_strain": [float(v) for v in strain_max],
    }
    timing = {"wall_s": time.perf_counter() - wall0, "steps": n_steps}
    return SimulationResult(params, report, summary, timing, frames)


# -- report JSON ----------------------------------------------------------------


def result_to_dict(result: SimulationResult) -> dict:
    r = result.report
    return {
        "version": REPORT_VERSION,
        "generator": f"palletbench {__version__}",
        "params": params_to_dict(result.params, inline_schema=True),
        "outcome": r.outcome,
        "measurements": r.measurements,
        "violations": [v.to_dict() for v in r.violations],
        "timing": result.timing,
        "seed": result.params.seed,
        "trace_summary": result.trace_summary,
        **({"error": result.error} if result.error else {}),
    }


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def emit_report_json(result: SimulationResult | dict) -> bytes:
    return canonical_json(result if isinstance(result, dict) else result_to_dict(result))


def parse_report_json(data: bytes | str) -> dict:
    return json.loads(data)


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


# -- frame export ---------------------------------------------------------------


def frame_meta(scene: Scene) -> dict:
    """Everything ``validate`` needs to re-classify an exported trace."""
    w = scene.world
    p = scene.params
    return {
        "ids": list(w.ids),
        "roles": list(w.roles),
        "half_extents": w.half.tolist(),
        "unit_height_m": scene.unit_height,
        "base_z": float(w.pos[scene.pallet_idx, 2] - w.half[scene.pallet_idx, 2]),
        "frame_dt": steps_per_frame(p) * p.timestep,
        "t_stop": MotionProfile.from_conditions(p.conditions).t_stop,
        "tear_threshold": p.cloth.tear_threshold if p.cloth.enabled else None,
        "wrap_edges": scene.wrap.edges.tolist() if scene.wrap is not None else None,
    }


def frame_to_dict(scene: Scene, rec: FrameRecord, extra: dict | None = None) -> dict:
    ids = scene.world.ids
    out = {
        "t": rec.t,
        "bodies": [{"id": ids[i], "pos": rec.pos[i].tolist(), "quat": rec.quat[i].tolist(),
                    "vel": rec.vel[i].tolist(), "omega": rec.omega[i].tolist()}
                   for i in range(len(ids))],
    }
    if rec.wrap_vertices is not None:
        out["wrap_vertices"] = rec.wrap_vertices.tolist()
    if extra:
        out.update(extra)
    return out


class NdjsonWriter:
    """Streams frames to ``path``; the first line also carries ``meta``."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._fh = None

    def __call__(self, scene: Scene, rec: FrameRecord, extra: dict) -> None:
        if self._fh is None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "w")
            except OSError as exc:
                raise OSError(f"cannot write {self.path}: {exc}") from exc
            d = frame_to_dict(scene, rec, extra)
            d["meta"] = frame_meta(scene)
        else:
            d = frame_to_dict(scene, rec, extra)
        self._fh.write(json.dumps(d, separators=(",", ":")) + "\n")

    def close(self) -> list[str]:
        if self._fh is not None:
            self._fh.close()
            return [str(self.path)]
        return []


_CUBE_FACES = ((1, 2, 4, 3), (5, 6, 8, 7), (1, 5, 7, 3), (2, 4, 8, 6), (1, 2, 6, 5), (3, 7, 8, 4))


class ObjWriter:
    """One OBJ per frame with every box and, if present, the wrap triangles."""

    def __init__(self, out_dir: str | os.PathLike, stem: str = "frame"):
        self.dir = Path(out_dir)
        self.stem = stem
        self.files: list[str] = []

    def __call__(self, scene: Scene, rec: FrameRecord, extra: dict) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{self.stem}_{len(self.files):05d}.obj"
        try:
            path.write_text(frame_obj(scene, rec))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        self.files.append(str(path))

    def close(self) -> list[str]:
        return list(self.files)


def _wrap_faces(scene: Scene) -> list[tuple[int, int, int]]:
    wrap = scene.wrap
    nr, rows = wrap.ring, wrap.rows
    faces = []
    for r in range(rows - 1):
        for c in range(nr):
            a, b = r * nr + c, r * nr + (c + 1) % nr
            faces.append((a, b, b + nr))
            faces.append((a, b + nr, a + nr))
    return faces


def frame_obj(scene: Scene, rec: FrameRecord) -> str:
    w = scene.world
    corners = box_corners(np.asarray(rec.pos), np.asarray(rec.quat), w.half)
    lines = [f"# t={rec.t!r}"]
    for b in range(w.n):
        lines.append(f"o {w.ids[b]}")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in corners[b])
        off = 8 * b
        lines.extend("f " + " ".join(str(off + k) for k in face) for face in _CUBE_FACES)
    if rec.wrap_vertices is not None:
        off = 8 * w.n + 1
        lines.append("o wrap")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in rec.wrap_vertices)
        lines.extend(f"f {a + off} {b + off} {c + off}" for a, b, c in _wrap_faces(scene))
    return "\n".join(lines) + "\n"


EXPORT_FORMATS = ("poses-ndjson", "obj-sequence")


def make_sink(fmt: str, out_dir: str | os.PathLike):
    if fmt == "poses-ndjson":
        return NdjsonWriter(Path(out_dir) / "frames.ndjson")
    if fmt == "obj-sequence":
        return ObjWriter(Path(out_dir) / "obj")
    raise ValueError(f"unknown export format {fmt!r}; expected one of {EXPORT_FORMATS}")


def export_frames(result: SimulationResult, trajectory: Iterable[FrameRecord], fmt: str,
                  out_dir: str | os.PathLike) -> list[str]:
    """Write retained frames of ``result`` in ``fmt``; returns written paths."""
    scene = build_scene(result.params.schema, result.params)
    writer = make_sink(fmt, out_dir)
    for rec in trajectory:
        extra = {}
        if rec.wrap_vertices is not None:
            scene.wrap.x = np.array(rec.wrap_vertices)
            sf = compute_strain(scene.wrap)
            extra = {"max_strain": sf.max_strain, "max_strain_edge": sf.argmax}
        writer(scene, rec, extra)
    files = writer.close()
    result.manifest.extend(files)
    return files


def load_ndjson_trace(path: str | os.PathLike) -> tuple[dict, DeformationTrace, WrapStrainTrace | None]:
    """Rebuild the package deformation trace from a poses-ndjson export."""
    meta = None
    trace = None
    strains, edges = [], []
    have_strain = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if meta is None:
                if "meta" not in rec:
                    raise ValueError(f"{path}:{lineno}: first frame lacks 'meta'")
                meta = rec["meta"]
                roles = meta["roles"]
                pk = [i for i, r in enumerate(roles) if r == "package"]
                sl = roles.index("sleigh")
                half = np.array(meta["half_extents"])[pk]
                trace = new_trace([meta["ids"][i] for i in pk], half, meta["base_z"], meta["frame_dt"])
            bodies = rec["bodies"]
            arr = {k: np.array([b[k] for b in bodies], float) for k in ("pos", "quat", "vel", "omega")}
            track(trace, rec["t"], arr["pos"][pk], arr["quat"][pk], arr["vel"][pk], arr["omega"][pk],
                  arr["pos"][sl], arr["quat"][sl], arr["vel"][sl])
            if "max_strain" in rec:
                have_strain = True
                strains.append(rec["max_strain"])
                edges.append(rec["max_strain_edge"])
    if meta is None:
        raise ValueError(f"{path}: no frames")
    ws = WrapStrainTrace(np.array(strains), np.array(edges, np.int64)) if have_strain else None
    return meta, trace, ws


# -- campaigns ------------------------------------------------------------------


@dataclass
class CampaignStatistics:
    runs: int
    successes: int
    failures: int
    inconclusive: int
    errors: int
    success_rate: float
    violation_histogram: dict
    by_accel_g: dict
    by_layers: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _run_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(index,))
    lo, hi = ss.generate_state(2, np.uint32)
    return int(hi) << 32 | int(lo)


def campaign_params(base_schema: PalletizingSchema, ranges: ParameterRanges, n_runs: int, seed: int,
                    base: SimulationParameters | None = None) -> list[SimulationParameters]:
    """Parameter sets of a campaign; each a pure function of (seed, index)."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    base = base if base is not None else default_params(base_schema)
    n_max = max(4, len(base_schema.layers))
    layer_range = ranges.n_layers if ranges.n_layers is not None else (4, n_max)
    out = []
    for k in range(n_runs):
        s = _run_seed(seed, k)
        rng = np.random.default_rng(np.random.SeedSequence(s, spawn_key=(1,)))
        rot = int(ranges.rotations[int(rng.integers(len(ranges.rotations)))])
        n_layers = int(rng.integers(layer_range[0], layer_range[1] + 1))
        schema = augment_schema(base_schema, rot, n_layers)
        p = generate_random_params(ranges, s, replace(base, schema=schema, schema_file=None))
        out.append(p)
    return out


def _run_one(args) -> tuple[int, bytes]:
    index, pdict = args
    params = params_from_dict(pdict)
    try:
        result = run_simulation(params)
    except PalletbenchError as exc:
        result = SimulationResult(params, ValidationReport(INCONCLUSIVE, 0.0, None, None, 0.0),
                                  {}, {"wall_s": 0.0, "steps": 0},
                                  error=f"{type(exc).__name__}: {exc}")
    return index, emit_report_json(result)


def effective_parallelism(parallelism: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    p = max(1, int(parallelism))
    if cap:
        try:
            p = min(p, max(1, int(cap)))
        except ValueError:
            pass
    return p


def aggregate(reports: list[dict]) -> CampaignStatistics:
    outcomes = [r["outcome"] for r in reports]
    n = len(reports)
    hist = {c: 0 for c in CRITERIA}
    for r in reports:
        for c in {v["criterion"] for v in r["violations"]}:
            hist[c] += 1

    def bucket(key_fn):
        out: dict[str, dict] = {}
        for r in reports:
            b = out.setdefault(key_fn(r), {"runs": 0, "success": 0, "failure": 0, "inconclusive": 0})
            b["runs"] += 1
            b[r["outcome"]] += 1
        return dict(sorted(out.items()))

    succ = outcomes.count("success")
    return CampaignStatistics(
        runs=n, successes=succ, failures=outcomes.count("failure"),
        inconclusive=outcomes.count("inconclusive"),
        errors=sum(1 for r in reports if r.get("error")),
        success_rate=succ / n if n else 0.0,
        violation_histogram=hist,
        by_accel_g=bucket(lambda r: f"{r['params']['conditions']['accel_g']:.1f}"),
        by_layers=bucket(lambda r: str(r["params"]["schema_xml"].count("<layer"))),
    )


def run_campaign(base_schema: PalletizingSchema, ranges: ParameterRanges, n_runs: int, seed: int,
                 parallelism: int = 1, *, base: SimulationParameters | None = None,
                 out_dir: str | os.PathLike | None = None) -> tuple[CampaignStatistics, list[bytes]]:
    """Run ``n_runs`` randomized simulations; output does not depend on
    ``parallelism``. Per-run engine errors become inconclusive runs."""
    plist = campaign_params(base_schema, ranges, n_runs, seed, base)
    jobs = [(k, params_to_dict(p, inline_schema=True)) for k, p in enumerate(plist)]
    workers = min(effective_parallelism(parallelism), n_runs)
    if workers == 1:
        done = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            done = list(ex.map(_run_one, jobs))
    done.sort(key=lambda x: x[0])
    blobs = [b for _, b in done]
    stats = aggregate([json.loads(b) for b in blobs])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for k, b in enumerate(blobs):
            (out / f"run_{k:04d}.json").write_bytes(b)
        (out / "statistics.json").write_bytes(canonical_json(stats.to_dict()))
    return stats, blobs
