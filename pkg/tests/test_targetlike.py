import numpy as np
import pytest

from lionxa.errors import HeightMismatch, UnsupportedUpsampling
from lionxa.lidar_io import PointCloud, SensorSpec
from lionxa.projection import project
from lionxa.scene import StreetParams, simulate_scan, synth_scene
from lionxa.targetlike import align_dims, align_index_map, column_selection, resample_beams, retained_rows


def test_halving_keeps_half_the_rows():
    src = SensorSpec.uniform(64, 2.0, -24.8, 64)
    tgt = SensorSpec.uniform(32, 2.0, -24.8, 64)
    rows = retained_rows(src, tgt)
    assert len(rows) == 32 and rows[0] == 0 and rows[-1] == 63
    assert set(np.diff(rows)) <= {2, 3}


def test_resample_keeps_labels(sensor64, sensor32):
    cloud, raw = simulate_scan(synth_scene(5, StreetParams().scene_params()), sensor64, 5)
    tl = resample_beams(cloud, raw, sensor64, sensor32)
    assert 0 < len(tl.cloud) < len(cloud)
    assert np.array_equal(tl.cloud.points, cloud.points[tl.source_index])
    assert np.array_equal(tl.labels.labels, raw.labels[tl.source_index])
    img, _ = project(tl.cloud, sensor64)
    assert img.valid.any(axis=1).sum() <= 32


def test_no_upsampling(sensor64, sensor32):
    cloud = PointCloud(np.ones((2, 4)))
    with pytest.raises(UnsupportedUpsampling):
        resample_beams(cloud, None, sensor32, sensor64)


def test_align_dims_columns(street_scan, sensor32):
    img, pm = project(street_scan[0], sensor32, 4)
    out = align_dims(img, 32, 2)
    assert column_selection(4, 2).tolist() == [0, 2]
    assert np.array_equal(out.data, img.data[:, [0, 2]])
    with pytest.raises(HeightMismatch):
        align_dims(img, 16, 2)
    am = align_index_map(pm, 2)
    old = pm.point_to_pixel[:, 1]
    assert np.array_equal(am.projected, pm.projected & np.isin(old, [0, 2]))
    assert np.array_equal(am.point_to_pixel[am.projected, 1], old[am.projected] // 2)
