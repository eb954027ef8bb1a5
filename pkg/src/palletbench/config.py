"""Palletizing schemas, simulation parameters and their file formats.

Files use packaging-industry units (millimetres, kilograms). The dataclasses
below keep file units for the schema so that XML round-trips are exact;
conversion to SI metres happens in :mod:`palletbench.scene`.
"""

from __future__ import annotations

import json
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyRange,
    FootprintExceeded,
    InvalidParams,
    InvalidValue,
    MalformedJSON,
    MalformedXML,
    MissingElement,
    MissingSchema,
    OutOfRange,
    OverlappingPlacements,
    UnknownPackageId,
)

G = 9.81
MM = 1e-3

ACCEL_G_RANGE = (0.3, 0.8)
IMPULSE_RANGE = (0.35, 0.5)
FRICTION_RANGE = (0.0, 2.0)
ROTATIONS_DEG = (0, 90, 180, 270)
OVERLAP_TOL_MM2 = 1.0
MAX_TIMESTEP = 1.0 / 60.0


# --------------------------------------------------------------------------
# Schema types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PackageSpec:
    id: str
    dims: tuple[float, float, float]  # mm
    mass: float  # kg
    friction: float = 0.5

    @property
    def dims_m(self) -> tuple[float, float, float]:
        return (self.dims[0] * MM, self.dims[1] * MM, self.dims[2] * MM)


@dataclass(frozen=True)
class Placement:
    """Footprint centre relative to the pallet centre (mm) and yaw in degrees."""

    package_id: str
    x: float
    y: float
    rot: int = 0


@dataclass(frozen=True)
class LayerLayout:
    placements: tuple[Placement, ...]


@dataclass(frozen=True)
class PalletizingSchema:
    pallet: PackageSpec
    layers: tuple[LayerLayout, ...]
    package_catalog: Mapping[str, PackageSpec]
    overhang: float = 0.0  # mm allowed beyond the pallet edge
    name: str = ""

    def package(self, placement: Placement) -> PackageSpec:
        return self.package_catalog[placement.package_id]

    def footprint(self, placement: Placement) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, y_lo, y_hi) in mm."""
        dx, dy, _ = self.package(placement).dims
        if placement.rot % 180 == 90:
            dx, dy = dy, dx
        return (placement.x - dx / 2, placement.x + dx / 2,
                placement.y - dy / 2, placement.y + dy / 2)

    def layer_height(self, index: int) -> float:
        return max(self.package(p).dims[2] for p in self.layers[index].placements)

    @property
    def unit_height(self) -> float:
        """Pallet height plus every layer height, mm."""
        return self.pallet.dims[2] + sum(self.layer_height(i) for i in range(len(self.layers)))

    @property
    def total_mass(self) -> float:
        return sum(self.package(p).mass for layer in self.layers for p in layer.placements)

    @property
    def n_packages(self) -> int:
        return sum(len(layer.placements) for layer in self.layers)


def default_schema() -> PalletizingSchema:
    """EUR pallet with one 2x2 layer of 400x300x250 mm, 10 kg boxes."""
    box = PackageSpec("box", (400.0, 300.0, 250.0), 10.0, 0.5)
    layer = LayerLayout(tuple(
        Placement("box", x, y, 0) for y in (-150.0, 150.0) for x in (-200.0, 200.0)
    ))
    return PalletizingSchema(
        pallet=PackageSpec("pallet", (1200.0, 800.0, 144.0), 25.0, 0.5),
        layers=(layer,),
        package_catalog={"box": box},
    )


def check_schema(schema: PalletizingSchema) -> None:
    """Raise the first schema invariant breach found."""
    if not schema.layers:
        raise MissingElement("schema has no <layer>", "palletizing")
    px, py, _ = schema.pallet.dims
    lim_x = px / 2 + schema.overhang
    lim_y = py / 2 + schema.overhang
    for li, layer in enumerate(schema.layers):
        lpath = f"palletizing/layer[{li}]"
        if not layer.placements:
            raise MissingElement("layer has no <place>", lpath)
        boxes = []
        for pi, pl in enumerate(layer.placements):
            path = f"{lpath}/place[{pi}]"
            if pl.package_id not in schema.package_catalog:
                raise UnknownPackageId(pl.package_id, path)
            if pl.rot not in ROTATIONS_DEG:
                raise InvalidValue(f"rot={pl.rot} not in {ROTATIONS_DEG}", path)
            x0, x1, y0, y1 = schema.footprint(pl)
            eps = 1e-6
            if x0 < -lim_x - eps or x1 > lim_x + eps or y0 < -lim_y - eps or y1 > lim_y + eps:
                raise FootprintExceeded(
                    f"footprint [{x0}, {x1}]x[{y0}, {y1}] exceeds pallet "
                    f"+/-{lim_x}x+/-{lim_y} mm", path)
            boxes.append((x0, x1, y0, y1))
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, b = boxes[i], boxes[j]
                w = min(a[1], b[1]) - max(a[0], b[0])
                h = min(a[3], b[3]) - max(a[2], b[2])
                if w > 0 and h > 0 and w * h > OVERLAP_TOL_MM2:
                    raise OverlappingPlacements(i, j, w * h, lpath)


# --------------------------------------------------------------------------
# Schema XML
# --------------------------------------------------------------------------


def _attr_float(el: ET.Element, name: str, path: str, default: float | None = None) -> float:
    raw = el.get(name)
    if raw is None:
        if default is None:
            raise MissingElement(f"missing attribute {name!r}", path)
        return default
    try:
        value = float(raw)
    except ValueError:
        raise InvalidValue(f"attribute {name}={raw!r} is not a number", path) from None
    if not math.isfinite(value):
        raise InvalidValue(f"attribute {name}={raw!r} is not finite", path)
    return value


def _parse_box(el: ET.Element, path: str, default_id: str | None = None) -> PackageSpec:
    pid = el.get("id", default_id)
    if pid is None or pid == "":
        raise MissingElement("missing attribute 'id'", path)
    dims = tuple(_attr_float(el, k, path) for k in ("dx", "dy", "dz"))
    if any(d <= 0 for d in dims):
        raise InvalidValue(f"dimensions must be > 0, got {dims}", path)
    mass = _attr_float(el, "mass", path)
    if mass <= 0:
        raise InvalidValue(f"mass must be > 0, got {mass}", path)
    friction = _attr_float(el, "friction", path, 0.5)
    if not FRICTION_RANGE[0] <= friction <= FRICTION_RANGE[1]:
        raise InvalidValue(f"friction {friction} outside {FRICTION_RANGE}", path)
    return PackageSpec(pid, dims, mass, friction)  # type: ignore[arg-type]


def parse_schema_xml(xml_text: str | bytes) -> PalletizingSchema:
    try:
        root = ET.fromstring(xml_text)
    except Exception as exc:  # ParseError, ValueError, encoding errors
        raise MalformedXML(str(exc)) from None
    if root.tag != "palletizing":
        raise MalformedXML(f"root element must be <palletizing>, got <{root.tag}>")
    overhang = _attr_float(root, "overhang", "palletizing", 0.0)
    if overhang < 0:
        raise InvalidValue("overhang must be >= 0", "palletizing")

    pallets = root.findall("pallet")
    if len(pallets) != 1:
        raise MissingElement(f"expected exactly one <pallet>, found {len(pallets)}", "palletizing")
    pallet = _parse_box(pallets[0], "palletizing/pallet", default_id="pallet")

    catalog: dict[str, PackageSpec] = {}
    for i, el in enumerate(root.findall("package")):
        path = f"palletizing/package[{i}]"
        spec = _parse_box(el, path)
        if spec.id in catalog:
            raise InvalidValue(f"duplicate package id {spec.id!r}", path)
        catalog[spec.id] = spec

    layers = []
    for li, lel in enumerate(root.findall("layer")):
        placements = []
        for pi, pel in enumerate(lel.findall("place")):
            path = f"palletizing/layer[{li}]/place[{pi}]"
            ref = pel.get("ref")
            if not ref:
                raise MissingElement("missing attribute 'ref'", path)
            if ref not in catalog:
                raise UnknownPackageId(ref, path)
            x = _attr_float(pel, "x", path)
            y = _attr_float(pel, "y", path)
            rot_f = _attr_float(pel, "rot", path, 0.0)
            if rot_f not in ROTATIONS_DEG:
                raise InvalidValue(f"rot={rot_f:g} not in {ROTATIONS_DEG}", path)
            placements.append(Placement(ref, x, y, int(rot_f)))
        layers.append(LayerLayout(tuple(placements)))
    if not layers:
        raise MissingElement("schema has no <layer>", "palletizing")

    schema = PalletizingSchema(pallet, tuple(layers), catalog, overhang, root.get("name", ""))
    check_schema(schema)
    return schema


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def serialize_schema_xml(schema: PalletizingSchema) -> str:
    root = ET.Element("palletizing")
    if schema.name:
        root.set("name", schema.name)
    if schema.overhang:
        root.set("overhang", _fmt(schema.overhang))

    def box(tag: str, spec: PackageSpec, with_id: bool) -> None:
        el = ET.SubElement(root, tag)
        if with_id:
            el.set("id", spec.id)
        for k, v in zip(("dx", "dy", "dz"), spec.dims):
            el.set(k, _fmt(v))
        el.set("mass", _fmt(spec.mass))
        el.set("friction", _fmt(spec.friction))

    box("pallet", schema.pallet, schema.pallet.id != "pallet")
    for spec in schema.package_catalog.values():
        box("package", spec, True)
    for layer in schema.layers:
        lel = ET.SubElement(root, "layer")
        for p in layer.placements:
            ET.SubElement(lel, "place", ref=p.package_id, x=_fmt(p.x), y=_fmt(p.y), rot=str(p.rot))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def load_schema(path: str | os.PathLike) -> PalletizingSchema:
    with open(path, "rb") as fh:
        return parse_schema_xml(fh.read())


def augment_schema(schema: PalletizingSchema, rotation: int, n_layers: int) -> PalletizingSchema:
    """Rotate every layout by quarter turns about the pallet centre and
    repeat (or truncate) the original layer cycle to ``n_layers``."""
    if rotation not in (0, 1, 2, 3):
        raise InvalidValue(f"rotation must be a quarter-turn count in 0..3, got {rotation}")
    if n_layers < 4:
        raise InvalidValue(f"n_layers must be >= 4, got {n_layers}")
    n = len(schema.layers)
    layers = [schema.layers[i % n] for i in range(n_layers)]
    if rotation:
        c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][rotation]
        layers = [
            LayerLayout(tuple(
                Placement(p.package_id, c * p.x - s * p.y + 0.0, s * p.x + c * p.y + 0.0,
                          (p.rot + 90 * rotation) % 360)
                for p in layer.placements
            ))
            for layer in layers
        ]
    out = replace(schema, layers=tuple(layers))
    check_schema(out)
    return out


# --------------------------------------------------------------------------
# Parameter types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SigmaProfile:
    """Piecewise-linear map from normalised cargo height to [0, 1]."""

    points: tuple[tuple[float, float], ...] = ((0.0, 1.0), (1.0, 1.0))

    @classmethod
    def constant(cls, value: float) -> "SigmaProfile":
        return cls(((0.0, float(value)), (1.0, float(value))))

    @property
    def is_constant(self) -> bool:
        return len({s for _, s in self.points}) == 1

    def __call__(self, h):
        hs = [p[0] for p in self.points]
        ss = [p[1] for p in self.points]
        return np.interp(np.clip(h, 0.0, 1.0), hs, ss)

    def to_json(self):
        if self.is_constant and len(self.points) == 2 and self.points[0][0] == 0.0 \
                and self.points[1][0] == 1.0:
            return self.points[0][1]
        return [list(p) for p in self.points]

    @classmethod
    def from_json(cls, value) -> "SigmaProfile":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return cls.constant(float(value))
        if isinstance(value, list) and value:
            pts = []
            for item in value:
                if not (isinstance(item, (list, tuple)) and len(item) == 2):
                    raise InvalidValue("sigma_h points must be [h, sigma] pairs", "sigma_h")
                pts.append((float(item[0]), float(item[1])))
            if len(pts) == 1:
                return cls.constant(pts[0][1])
            return cls(tuple(pts))
        raise InvalidValue("sigma_h must be a number or a list of [h, sigma] pairs", "sigma_h")


# Calibration placeholders, not measured material data.
MATERIAL_PRESETS: dict[str, dict[str, Any]] = {
    "lldpe-stretch": dict(stiffness=0.8, area_density=0.023, damping=0.02,
                          tear_threshold=0.25, full_enclosure=False),
    "heat-shrink": dict(stiffness=0.95, area_density=0.09, damping=0.03,
                        tear_threshold=0.10, full_enclosure=True),
    "kraft-paper": dict(stiffness=1.0, area_density=0.08, damping=0.05,
                        tear_threshold=0.05, full_enclosure=False),
}
_MATERIAL_ALIASES = {"llpde-stretch": "lldpe-stretch"}


@dataclass(frozen=True)
class ClothParams:
    material: str = "lldpe-stretch"
    area_density: float = 0.023  # kg/m^2
    stiffness: float = 0.8  # projection weight in (0, 1]
    damping: float = 0.02  # fraction of relative velocity removed per step
    resolution: int = 6  # vertices per side and per column
    tear_threshold: float = 0.25
    thickness: float = 0.002  # m
    overlap: float = 0.0  # m the band extends below the cargo onto the pallet
    full_enclosure: bool = False
    enabled: bool = True

    @classmethod
    def preset(cls, material: str, **overrides) -> "ClothParams":
        name = _MATERIAL_ALIASES.get(material, material)
        if name not in MATERIAL_PRESETS:
            raise InvalidValue(f"unknown cloth material {material!r}", "cloth.material")
        return cls(material=name, **{**MATERIAL_PRESETS[name], **overrides})


@dataclass(frozen=True)
class ValidationThresholds:
    permanent_frac: float = 0.05
    elastic_frac: float = 0.10
    bottom_zone_height: float = 0.20  # m
    bottom_zone_limit: float = 0.04  # m
    settle_speed_eps: float = 0.01  # m/s
    settle_hold: float = 0.5  # s


@dataclass(frozen=True)
class TestingConditions:
    __test__ = False  # not a pytest class

    accel_g: float = 0.5
    impulse_duration: float = 0.5  # s
    decel_rate: float = 2.0  # m/s^2

    @property
    def accel(self) -> float:
        return self.accel_g * G


@dataclass(frozen=True)
class EngineSettings:
    solver_iterations: int = 40
    cloth_iterations: int = 8
    frame_rate: float = 60.0
    sleigh_friction: float = 2.0
    baumgarte: float = 0.2
    slop: float = 0.001  # m


@dataclass(frozen=True)
class SimulationParameters:
    schema: PalletizingSchema
    conditions: TestingConditions = TestingConditions()
    tension_T: float = 1.0
    sigma_h: SigmaProfile = SigmaProfile()
    field_offset_d: float = 0.05  # m
    field_range_dmax: float = 0.10  # m
    cloth: ClothParams = ClothParams()
    thresholds: ValidationThresholds = ValidationThresholds()
    timestep: float = 1.0 / 240.0
    max_duration: float = 10.0
    seed: int = 0
    visual: Mapping[str, Any] = field(default_factory=dict)
    engine: EngineSettings = EngineSettings()
    schema_file: str | None = None


def default_params(schema: PalletizingSchema | None = None) -> SimulationParameters:
    return SimulationParameters(schema=schema if schema is not None else default_schema())


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    message: str
    lo: float | None = None
    hi: float | None = None
    value: Any = None


def _range(out, code, name, value, lo, hi) -> None:
    if not (lo <= value <= hi):
        out.append(Violation(code, name, f"{name}={value!r} outside [{lo}, {hi}]", lo, hi, value))


def validate_params(params: SimulationParameters) -> list[Violation]:
    out: list[Violation] = []
    c = params.conditions
    _range(out, "AccelOutOfRange", "accel_g", c.accel_g, *ACCEL_G_RANGE)
    _range(out, "ImpulseOutOfRange", "impulse_duration", c.impulse_duration, *IMPULSE_RANGE)
    if not c.decel_rate > 0:
        out.append(Violation("NonPositiveDecel", "decel_rate", "decel_rate must be > 0"))
    if not params.tension_T >= 0:
        out.append(Violation("NegativeTension", "tension_T", "tension_T must be >= 0"))
    for h, s in params.sigma_h.points:
        if not (0.0 <= h <= 1.0 and 0.0 <= s <= 1.0):
            out.append(Violation("SigmaOutOfRange", "sigma_h",
                                 f"sigma_h point ({h}, {s}) outside [0,1]x[0,1]", 0.0, 1.0))
            break
    hs = [p[0] for p in params.sigma_h.points]
    if any(b <= a for a, b in zip(hs, hs[1:])):
        out.append(Violation("SigmaNotIncreasing", "sigma_h", "sigma_h heights must increase"))
    if not params.timestep > 0:
        out.append(Violation("NonPositiveTimestep", "timestep", "timestep must be > 0"))
    elif params.timestep > MAX_TIMESTEP * (1 + 1e-12):
        out.append(Violation("TimestepTooLarge", "timestep", "timestep must be <= 1/60 s",
                             0.0, MAX_TIMESTEP, params.timestep))
    if not params.max_duration > 0:
        out.append(Violation("NonPositiveDuration", "max_duration", "max_duration must be > 0"))
    if not params.field_range_dmax > 0:
        out.append(Violation("NonPositiveFieldRange", "field_range_dmax", "field_range_dmax must be > 0"))
    if not params.field_offset_d >= 0:
        out.append(Violation("NegativeFieldOffset", "field_offset_d", "field_offset_d must be >= 0"))
    t = params.thresholds
    for name in ("permanent_frac", "elastic_frac", "bottom_zone_height", "bottom_zone_limit",
                 "settle_speed_eps", "settle_hold"):
        if not getattr(t, name) > 0:
            out.append(Violation("NonPositiveThreshold", f"thresholds.{name}", f"{name} must be > 0"))
    if not t.permanent_frac < t.elastic_frac:
        out.append(Violation("ThresholdOrdering", "thresholds",
                             "permanent_frac must be smaller than elastic_frac"))
    cl = params.cloth
    if cl.resolution < 2:
        out.append(Violation("ClothResolution", "cloth.resolution", "cloth resolution must be >= 2"))
    if not (0 < cl.stiffness <= 1):
        out.append(Violation("InvalidCloth", "cloth.stiffness", "cloth stiffness must be in (0, 1]"))
    if not (0 <= cl.damping < 1):
        out.append(Violation("InvalidCloth", "cloth.damping", "cloth damping must be in [0, 1)"))
    if not (cl.area_density > 0 and cl.tear_threshold > 0 and cl.thickness >= 0 and cl.overlap >= 0):
        out.append(Violation("InvalidCloth", "cloth", "cloth densities/thresholds must be positive"))
    e = params.engine
    if e.solver_iterations < 1 or e.cloth_iterations < 1:
        out.append(Violation("InvalidEngine", "engine", "iteration counts must be >= 1"))
    if not e.frame_rate > 0 or (params.timestep > 0 and 1.0 / (e.frame_rate * params.timestep) < 1 - 1e-9):
        out.append(Violation("InvalidEngine", "engine.frame_rate", "frame_rate must be > 0 and <= 1/timestep"))
    if not (0 <= params.seed < 2**64):
        out.append(Violation("SeedOutOfRange", "seed", "seed must be a 64-bit unsigned integer"))
    try:
        check_schema(params.schema)
    except OverlappingPlacements as exc:
        out.append(Violation("OverlappingPlacements", "schema", str(exc)))
    except ConfigError as exc:
        out.append(Violation("InvalidSchema", "schema", str(exc)))
    return out


# --------------------------------------------------------------------------
# Parameter JSON
# --------------------------------------------------------------------------

_TOP_KEYS = {"schema_file", "schema_xml", "conditions", "tension_T", "sigma_h", "field_offset_d",
             "field_range_dmax", "cloth", "thresholds", "timestep", "max_duration", "seed",
             "visual", "engine", "accel_g", "impulse_duration", "decel_rate"}


def _block(data: Mapping, key: str) -> dict:
    value = data.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise InvalidValue(f"{key} must be an object", key)
    return value


def _num(block: Mapping, key: str, default: float, path: str) -> float:
    if key not in block or block[key] is None:
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise InvalidValue(f"{key} must be a finite number, got {v!r}", path)
    return float(v)


def _int(block: Mapping, key: str, default: int, path: str) -> int:
    if key not in block or block[key] is None:
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvalidValue(f"{key} must be an integer, got {v!r}", path)
    return v


def _known(block: Mapping, cls, path: str, extra: Sequence[str] = ()) -> None:
    allowed = set(cls.__dataclass_fields__) | set(extra)
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise InvalidValue(f"unknown keys {unknown}", path)


def params_from_dict(data: Any, *, base_dir: str | os.PathLike | None = None,
                     schema: PalletizingSchema | None = None) -> SimulationParameters:
    if not isinstance(data, dict):
        raise MalformedJSON("parameter file must contain a JSON object")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise InvalidValue(f"unknown keys {unknown}", "params")

    schema_file = data.get("schema_file")
    if schema is None:
        if isinstance(data.get("schema_xml"), str):
            schema = parse_schema_xml(data["schema_xml"])
        elif isinstance(schema_file, str) and schema_file:
            path = os.path.join(os.fspath(base_dir or "."), schema_file)
            try:
                schema = load_schema(path)
            except OSError as exc:
                raise MissingSchema(f"cannot read schema file: {exc}", "schema_file") from None
        else:
            raise MissingSchema("no schema_file (or schema_xml) given", "schema_file")

    cond = _block(data, "conditions")
    _known(cond, TestingConditions, "conditions")
    dflt = TestingConditions()
    cond = {**{k: data[k] for k in ("accel_g", "impulse_duration", "decel_rate") if k in data}, **cond}
    conditions = TestingConditions(
        accel_g=_num(cond, "accel_g", dflt.accel_g, "conditions"),
        impulse_duration=_num(cond, "impulse_duration", dflt.impulse_duration, "conditions"),
        decel_rate=_num(cond, "decel_rate", dflt.decel_rate, "conditions"),
    )

    cl = _block(data, "cloth")
    _known(cl, ClothParams, "cloth")
    material = cl.get("material", ClothParams.material)
    if not isinstance(material, str):
        raise InvalidValue("cloth.material must be a string", "cloth")
    base_cloth = ClothParams.preset(material)
    cloth_kw: dict[str, Any] = {}
    for k in ("area_density", "stiffness", "damping", "tear_threshold", "thickness", "overlap"):
        cloth_kw[k] = _num(cl, k, getattr(base_cloth, k), "cloth")
    cloth_kw["resolution"] = _int(cl, "resolution", base_cloth.resolution, "cloth")
    for k in ("full_enclosure", "enabled"):
        v = cl.get(k, getattr(base_cloth, k))
        if not isinstance(v, bool):
            raise InvalidValue(f"cloth.{k} must be a boolean", "cloth")
        cloth_kw[k] = v
    cloth = replace(base_cloth, **cloth_kw)

    th = _block(data, "thresholds")
    _known(th, ValidationThresholds, "thresholds")
    td = ValidationThresholds()
    thresholds = ValidationThresholds(**{
        k: _num(th, k, getattr(td, k), "thresholds") for k in ValidationThresholds.__dataclass_fields__
    })

    en = _block(data, "engine")
    _known(en, EngineSettings, "engine")
    ed = EngineSettings()
    engine = EngineSettings(
        solver_iterations=_int(en, "solver_iterations", ed.solver_iterations, "engine"),
        cloth_iterations=_int(en, "cloth_iterations", ed.cloth_iterations, "engine"),
        frame_rate=_num(en, "frame_rate", ed.frame_rate, "engine"),
        sleigh_friction=_num(en, "sleigh_friction", ed.sleigh_friction, "engine"),
        baumgarte=_num(en, "baumgarte", ed.baumgarte, "engine"),
        slop=_num(en, "slop", ed.slop, "engine"),
    )

    visual = data.get("visual") or {}
    if not isinstance(visual, dict):
        raise InvalidValue("visual must be an object", "visual")

    d = SimulationParameters(schema=schema)
    params = SimulationParameters(
        schema=schema,
        conditions=conditions,
        tension_T=_num(data, "tension_T", d.tension_T, "params"),
        sigma_h=SigmaProfile.from_json(data["sigma_h"]) if data.get("sigma_h") is not None else d.sigma_h,
        field_offset_d=_num(data, "field_offset_d", d.field_offset_d, "params"),
        field_range_dmax=_num(data, "field_range_dmax", d.field_range_dmax, "params"),
        cloth=cloth,
        thresholds=thresholds,
        timestep=_num(data, "timestep", d.timestep, "params"),
        max_duration=_num(data, "max_duration", d.max_duration, "params"),
        seed=_int(data, "seed", d.seed, "params"),
        visual=visual,
        engine=engine,
        schema_file=schema_file if isinstance(schema_file, str) else None,
    )
    violations = validate_params(params)
    for v in violations:
        if v.lo is not None and v.hi is not None:
            raise OutOfRange(v.field, v.lo, v.hi, v.value)
    if violations:
        raise InvalidParams(violations)
    return params


def parse_params_json(json_text: str | bytes, *, base_dir: str | os.PathLike | None = None,
                      schema: PalletizingSchema | None = None) -> SimulationParameters:
    try:
        data = json.loads(json_text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedJSON(str(exc)) from None
    return params_from_dict(data, base_dir=base_dir, schema=schema)


def load_params(path: str | os.PathLike) -> SimulationParameters:
    with open(path, "rb") as fh:
        text = fh.read()
    return parse_params_json(text, base_dir=os.path.dirname(os.fspath(path)))


def params_to_dict(params: SimulationParameters, *, inline_schema: bool = True) -> dict[str, Any]:
    out: dict[str, Any] = {
        "conditions": {k: getattr(params.conditions, k) for k in ("accel_g", "impulse_duration", "decel_rate")},
        "tension_T": params.tension_T,
        "sigma_h": params.sigma_h.to_json(),
        "field_offset_d": params.field_offset_d,
        "field_range_dmax": params.field_range_dmax,
        "cloth": {k: getattr(params.cloth, k) for k in ClothParams.__dataclass_fields__},
        "thresholds": {k: getattr(params.thresholds, k) for k in ValidationThresholds.__dataclass_fields__},
        "timestep": params.timestep,
        "max_duration": params.max_duration,
        "seed": params.seed,
        "visual": dict(params.visual),
        "engine": {k: getattr(params.engine, k) for k in EngineSettings.__dataclass_fields__},
    }
    if params.schema_file is not None:
        out["schema_file"] = params.schema_file
    if inline_schema:
        out["schema_xml"] = serialize_schema_xml(params.schema)
    return out


def params_to_json(params: SimulationParameters, *, inline_schema: bool = True) -> str:
    return json.dumps(params_to_dict(params, inline_schema=inline_schema), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# Random generation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterRanges:
    """Closed intervals sampled by :func:`generate_random_params`.

    ``accel_g`` is drawn on the 0.1 g grid and ``impulse_duration`` on a
    0.05 s grid, matching the bench sweep steps.
    """

    accel_g: tuple[float, float] = ACCEL_G_RANGE
    impulse_duration: tuple[float, float] = IMPULSE_RANGE
    tension_T: tuple[float, float] | None = None
    decel_rate: tuple[float, float] | None = None
    rotations: tuple[int, ...] = (0, 1, 2, 3)
    n_layers: tuple[int, int] | None = None  # defaults to (4, N)


def _grid(lo: float, hi: float, step: float, name: str) -> list[float]:
    if lo > hi:
        raise EmptyRange(f"{name}: lower bound {lo} above upper bound {hi}")
    k0 = math.ceil(round(lo / step, 9))
    k1 = math.floor(round(hi / step, 9))
    if k1 < k0:
        raise EmptyRange(f"{name}: [{lo}, {hi}] contains no {step} step")
    return [round(k * step, 10) for k in range(k0, k1 + 1)]


def _check_sub(name: str, rng: tuple[float, float], legal: tuple[float, float]) -> None:
    lo, hi = rng
    if lo < legal[0] - 1e-12 or hi > legal[1] + 1e-12:
        raise OutOfRange(name, legal[0], legal[1], rng)


def generate_random_params(ranges: ParameterRanges, seed: int,
                           base: SimulationParameters | None = None) -> SimulationParameters:
    """Draw testing conditions (and optionally tension) from ``ranges``.

    Pure function of ``(ranges, seed, base)``.
    """
    base = base if base is not None else default_params()
    _check_sub("accel_g", ranges.accel_g, ACCEL_G_RANGE)
    _check_sub("impulse_duration", ranges.impulse_duration, IMPULSE_RANGE)
    accel_grid = _grid(*ranges.accel_g, 0.1, "accel_g")
    impulse_grid = _grid(*ranges.impulse_duration, 0.05, "impulse_duration")
    if ranges.impulse_duration[0] == ranges.impulse_duration[1]:
        impulse_grid = [float(ranges.impulse_duration[0])]
    if ranges.accel_g[0] == ranges.accel_g[1]:
        accel_grid = [float(ranges.accel_g[0])]

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    accel_g = accel_grid[int(rng.integers(len(accel_grid)))]
    impulse = impulse_grid[int(rng.integers(len(impulse_grid)))]
    decel = base.conditions.decel_rate
    if ranges.decel_rate is not None:
        lo, hi = ranges.decel_rate
        if lo > hi or lo <= 0:
            raise EmptyRange(f"decel_rate: invalid range {ranges.decel_rate}")
        decel = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    tension = base.tension_T
    if ranges.tension_T is not None:
        lo, hi = ranges.tension_T
        if lo > hi or lo < 0:
            raise EmptyRange(f"tension_T: invalid range {ranges.tension_T}")
        tension = float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    params = replace(
        base,
        conditions=TestingConditions(accel_g, impulse, decel),
        tension_T=tension,
        seed=int(seed),
    )
    violations = validate_params(params)
    if violations:
        raise InvalidParams(violations)
    return params


def parse_ranges_json(json_text: str | bytes) -> ParameterRanges:
    try:
        data = json.loads(json_text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedJSON(str(exc)) from None
    if not isinstance(data, dict):
        raise MalformedJSON("ranges file must contain a JSON object")
    _known(data, ParameterRanges, "ranges")
    kw: dict[str, Any] = {}
    for key in ("accel_g", "impulse_duration", "tension_T", "decel_rate", "n_layers"):
        if data.get(key) is not None:
            v = data[key]
            if not (isinstance(v, list) and len(v) == 2 and all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
                raise InvalidValue(f"{key} must be a [lo, hi] pair", "ranges")
            kw[key] = (int(v[0]), int(v[1])) if key == "n_layers" else (float(v[0]), float(v[1]))
    if data.get("rotations") is not None:
        rots = data["rotations"]
        if not (isinstance(rots, list) and rots and all(r in (0, 1, 2, 3) for r in rots)):
            raise InvalidValue("rotations must be a non-empty list of quarter-turn counts", "ranges")
        kw["rotations"] = tuple(int(r) for r in rots)
    return ParameterRanges(**kw)


def ranges_to_dict(ranges: ParameterRanges) -> dict[str, Any]:
    return {k: (list(v) if isinstance(v, tuple) else v)
            for k, v in ((f, getattr(ranges, f)) for f in ParameterRanges.__dataclass_fields__)}
