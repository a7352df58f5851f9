import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lionxa.errors import InvalidScene
from lionxa.lidar_io import SensorSpec, builtin_mapping
from lionxa.scene import (SCENE_CLASSES, Box, BoxKind, Cylinder, Plane, Scene, SceneParams, StreetParams, cast,
                          raw_ids_for, simulate_scan, synth_scene)


def test_plane_hit_distance():
    t = Plane(-2.0, 40).intersect(np.zeros(3), np.array([[0.0, 0.6, -0.8], [1.0, 0.0, 0.0]]))
    assert t[0] == pytest.approx(2.5)
    assert np.isinf(t[1])


def test_box_and_cylinder_hits():
    dirs = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    box = Box((10.0, 0.0, 0.0), (2.0, 2.0, 2.0), 0.0, 50)
    t = box.intersect(np.zeros(3), dirs)
    assert t[0] == pytest.approx(9.0) and np.isinf(t[1])
    cyl = Cylinder((-5.0, 0.0), 0.5, -1.0, 1.0, 80)
    t = cyl.intersect(np.zeros(3), dirs)
    assert np.isinf(t[0]) and t[1] == pytest.approx(4.5)


def test_cast_picks_nearest():
    scene = Scene((Box((10.0, 0.0, 0.0), (2.0, 2.0, 2.0), 0.0, 50), Box((5.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0, 10)))
    t, which = cast(scene, np.zeros(3), np.array([[1.0, 0.0, 0.0]]))
    assert which[0] == 1 and t[0] == pytest.approx(4.5)


@given(st.integers(0, 2**31 - 1))
def test_synth_scene_deterministic(seed):
    p = StreetParams().scene_params()
    assert synth_scene(seed, p) == synth_scene(seed, p)


def test_invalid_params():
    bad = SceneParams(boxes=(BoxKind(10, (1, 1), (2.0, 1.0), (1.0, 1.0), (1.0, 1.0), (0.0, 0.0)),))
    with pytest.raises(InvalidScene):
        synth_scene(0, bad)
    with pytest.raises(InvalidScene):
        synth_scene(0, SceneParams(ground_label=None))


def test_hits_lie_on_surfaces(street_scan):
    cloud, raw = street_scan
    scene = synth_scene(3, StreetParams().scene_params())
    pts = cloud.xyz + np.array([0.0, 0.0, 1.8])
    d = np.min([np.abs(p.distance(pts)) for p in scene.primitives], axis=0)
    assert d.max() < 1e-6
    assert set(np.unique(raw.labels)) <= set(SCENE_CLASSES)
    assert np.all((cloud.remission >= 0) & (cloud.remission <= 1))


def test_scan_within_range():
    s = SensorSpec.uniform(16, 5.0, -25.0, 64, 20.0, 1.5)
    cloud, _ = simulate_scan(synth_scene(1, StreetParams().scene_params()), s, 1)
    assert np.linalg.norm(cloud.xyz, axis=1).max() <= 20.0 + 1e-9


def test_scan_seeded():
    s = SensorSpec.uniform(16, 5.0, -25.0, 64, 40.0, 1.5)
    scene = synth_scene(2, StreetParams().scene_params())
    a, _ = simulate_scan(scene, s, 9)
    b, _ = simulate_scan(scene, s, 9)
    assert a == b


@pytest.mark.parametrize("name", ["semantickitti-nuscenes", "nuscenes-lidarseg", "semantickitti-poss",
                                  "semanticposs"])
def test_scene_ids_map_to_classes(name):
    m = builtin_mapping(name)
    mapped = m.map_ids(raw_ids_for(m, list(SCENE_CLASSES)))
    assert np.all(mapped.labels >= 0)
