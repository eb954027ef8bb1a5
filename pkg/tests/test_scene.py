from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA
from palletbench.config import (
    LayerLayout,
    PackageSpec,
    Placement,
    PalletizingSchema,
    augment_schema,
    default_params,
    default_schema,
    load_schema,
)
from palletbench.dynamics import apply_external, step
from palletbench.errors import ConfigError, OverlappingPlacements
from palletbench.scene import (
    SEED_GAP,
    build_scene,
    package_id,
    snapshot,
    verify_integrity,
)


def scene_for(schema, **kw):
    return build_scene(schema, replace(default_params(schema), **kw))


def grid_schema(n_layers, nx=2, ny=2, dims=(400.0, 300.0, 250.0), mass=10.0):
    box = PackageSpec("box", dims, mass, 0.5)
    xs = [(i - (nx - 1) / 2) * dims[0] for i in range(nx)]
    ys = [(j - (ny - 1) / 2) * dims[1] for j in range(ny)]
    layer = LayerLayout(tuple(Placement("box", x, y) for y in ys for x in xs))
    return PalletizingSchema(PackageSpec("pallet", (1200.0, 800.0, 144.0), 25.0, 0.5),
                             (layer,) * n_layers, {"box": box})


def test_single_layer_bodies():
    sc = scene_for(default_schema())
    w = sc.world
    assert w.n == 6
    assert w.roles.count("sleigh") == 1 and w.roles.count("pallet") == 1
    assert sc.package_ids == [package_id(0, k) for k in range(4)]
    pallet_top = w.pos[sc.pallet_idx, 2] + w.half[sc.pallet_idx, 2]
    for i in sc.package_idx:
        assert w.pos[i, 2] == pytest.approx(pallet_top + 0.125, abs=SEED_GAP + 1e-12)
    assert np.all(w.vel == 0) and np.all(w.omega == 0)
    # pallet rests on the sleigh surface
    assert w.pos[sc.pallet_idx, 2] - w.half[sc.pallet_idx, 2] == pytest.approx(0.0, abs=SEED_GAP + 1e-12)
    assert w.kinematic[sc.sleigh_idx] and not w.kinematic[sc.package_idx].any()


def test_four_layers_of_eight():
    sc = scene_for(grid_schema(4, nx=4, ny=2, dims=(300.0, 400.0, 200.0), mass=7.5))
    assert sc.n_packages == 32
    assert sc.total_cargo_mass == pytest.approx(32 * 7.5)
    assert np.array_equal(np.bincount(sc.layer_of), [8, 8, 8, 8])
    assert verify_integrity(sc).ok


def test_empty_layers_rejected():
    s = replace(default_schema(), layers=())
    with pytest.raises(ConfigError):
        scene_for(s)


def test_overlap_rejected_by_default():
    s = default_schema()
    pl = list(s.layers[0].placements)
    pl[1] = replace(pl[1], x=pl[1].x - 10)
    with pytest.raises(OverlappingPlacements):
        scene_for(replace(s, layers=(LayerLayout(tuple(pl)),)))


def test_rotated_extents_swapped():
    s = load_schema(DATA / "mixed.xml")
    sc = scene_for(s)
    w = sc.world
    a0 = sc.package_idx[0]  # type A at rot 90
    assert np.allclose(w.half[a0], (0.15, 0.2, 0.125))
    assert np.all(w.quat[sc.package_idx] == (1, 0, 0, 0))
    assert verify_integrity(sc).ok


def test_fresh_scene_integrity_ok(six_layer):
    assert verify_integrity(scene_for(six_layer)).ok
    assert verify_integrity(scene_for(default_schema())).ok


def test_nan_reported():
    sc = scene_for(default_schema())
    i = sc.package_idx[2]
    sc.world.pos[i, 1] = np.nan
    rep = verify_integrity(sc)
    assert not rep.ok
    assert ("NonFiniteState", (sc.world.ids[i],)) in [(x.code, x.ids) for x in rep.issues]


def test_overlap_fixture_initial_penetration():
    s = default_schema()
    pl = list(s.layers[0].placements)
    pl[1] = replace(pl[1], x=pl[1].x - 10)
    sc = build_scene(replace(s, layers=(LayerLayout(tuple(pl)),)), default_params(s), check=False)
    rep = verify_integrity(sc)
    pen = [x for x in rep.issues if x.code == "InitialPenetration"]
    assert pen and set(pen[0].ids) == {package_id(0, 0), package_id(0, 1)}


def test_other_integrity_codes():
    sc = scene_for(default_schema())
    i = sc.package_idx[0]
    sc.world.quat[i] = (1.0, 0.01, 0, 0)
    sc.world.inertia[sc.package_idx[1]] *= 2
    sc.world.pos[sc.package_idx[3], 2] += 0.01
    codes = verify_integrity(sc).codes()
    assert {"QuaternionNotNormalized", "InertiaMismatch", "UnsupportedBody"} <= set(codes)


def test_wrap_not_enclosing():
    sc = scene_for(default_schema())
    sc.wrap.x[:, 0] *= 0.5
    assert "WrapNotEnclosing" in verify_integrity(sc).codes()


def test_snapshot_equals_initial():
    sc = scene_for(default_schema())
    assert snapshot(sc) == sc.initial
    assert snapshot(sc) == snapshot(sc)
    rec = snapshot(sc)
    with pytest.raises(ValueError):
        rec.pos[0, 0] = 1.0


def test_snapshot_after_step_only_forced_body_changes():
    sc = scene_for(default_schema(), cloth=replace(default_params().cloth, enabled=False))
    w = sc.world
    w.gravity[:] = 0.0
    before = snapshot(sc)
    target = sc.package_idx[1]
    apply_external(w, w.ids[target], (0, 0, 5.0))
    step(w, 1 / 240)
    after = snapshot(sc)
    moved = np.flatnonzero(np.any(after.pos != before.pos, axis=1) | np.any(after.vel != before.vel, axis=1))
    assert moved.tolist() == [target]


def test_build_deterministic(six_layer):
    a, b = scene_for(six_layer), scene_for(six_layer)
    for x, y in zip(a.world.state_arrays(), b.world.state_arrays()):
        assert np.array_equal(x, y)
    assert np.array_equal(a.wrap.x, b.wrap.x)
    assert a.fields == b.fields


@pytest.mark.slow
def test_rest_stability(six_layer):
    sc = scene_for(six_layer)
    p0 = sc.world.pos[sc.package_idx].copy()
    for _ in range(240):
        step(sc.world, 1 / 240)
    assert np.max(np.linalg.norm(sc.world.pos[sc.package_idx] - p0, axis=1)) <= 0.002


@settings(max_examples=25)
@given(rot=st.integers(0, 3), n=st.integers(4, 9))
def test_unit_height_is_hand_sum(rot, n):
    s = augment_schema(load_schema(DATA / "six_layer.xml"), rot, n)
    sc = scene_for(s, cloth=replace(default_params().cloth, enabled=False))
    expect = 0.144 + sum(max(s.package(p).dims[2] for p in layer.placements) * 1e-3 for layer in s.layers)
    assert sc.unit_height == pytest.approx(expect, abs=1e-12)
    w = sc.world
    # geometric top of the built stack matches H up to the seed gaps
    top = (w.pos[sc.package_idx, 2] + w.half[sc.package_idx, 2]).max()
    assert top - expect == pytest.approx((n + 1) * SEED_GAP, abs=1e-9)
