import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lionxa import autodiff as ad
from lionxa.errors import DegenerateStats, EmptyCloud, InvalidCutout, MalformedImage, ShapeError
from lionxa.lidar_io import IGNORE, LabelArray, PointCloud, SensorSpec
from lionxa.projection import (INVALID_RANGE, DropoutSpec, augment2d, channel_stats, compute_normals, cutout,
                               flip_columns, flip_map, lift_features, nearest_beam, normalize_channels, project,
                               read_range_image, write_range_image)
from lionxa.scene import Plane, Scene, simulate_scan


def cloud_of(*pts):
    return PointCloud(np.array([[*p, 0.5] for p in pts], dtype=float))


def test_forward_point_column(sensor32):
    for w in (8, 64, 128):
        _, pm = project(cloud_of((1.0, 0.0, 0.0)), sensor32, w)
        assert pm.point_to_pixel[0, 1] == w // 2


def test_rows_follow_beams(sensor32):
    e = sensor32.elevations
    pts = [(np.cos(a), 0.0, np.sin(a)) for a in (e[0], e[5], e[-1])]
    _, pm = project(cloud_of(*pts), sensor32)
    assert pm.point_to_pixel[:, 0].tolist() == [0, 5, 31]


def test_nearest_beam_tie_goes_low():
    assert nearest_beam(np.array([0.5]), np.array([1.0, 0.0]))[0] == 0


def test_outside_fov_unprojected(sensor32):
    _, pm = project(cloud_of((1.0, 0.0, 0.0), (0.0, 0.0, 5.0), (1.0, 0.0, -5.0)), sensor32)
    assert pm.unprojected.tolist() == [1, 2]


def test_empty_cloud(sensor32):
    with pytest.raises(EmptyCloud):
        project(PointCloud(np.zeros((0, 4))), sensor32)


def test_partition_and_representative(street_scan, sensor32):
    cloud, _ = street_scan
    img, pm = project(cloud, sensor32, 24)
    members = pm.pixel_to_points()
    flat = sorted(i for m in members for i in m)
    assert sorted(flat + pm.unprojected.tolist()) == list(range(len(cloud)))
    r = np.linalg.norm(cloud.xyz, axis=1)
    for k, m in enumerate(members):
        if m:
            assert img.point_index.reshape(-1)[k] == min(m, key=lambda i: (r[i], i))
        else:
            assert img.range.reshape(-1)[k] == INVALID_RANGE


def test_plane_normals():
    sensor = SensorSpec.uniform(16, -3.0, -25.0, 128, 80.0, 2.0)
    cloud, _ = simulate_scan(Scene((Plane(0.0, 40),)), sensor, 0)
    img = compute_normals(project(cloud, sensor)[0])
    n = img.normals[np.linalg.norm(img.normals, axis=-1) > 0]
    assert len(n) > 0.5 * img.valid.sum()
    assert np.abs(n - [0.0, 0.0, 1.0]).max() < 1e-9


def test_lift_features_array_and_tensor(street_scan, sensor32, rng):
    cloud, _ = street_scan
    _, pm = project(cloud, sensor32, 32)
    fmap = rng.normal(size=(32, 32, 3))
    lifted = lift_features(fmap, pm)
    t = lift_features(ad.Tensor(fmap), pm)
    assert np.array_equal(t.data, lifted)
    for n in range(0, len(cloud), 97):
        r, c = pm.point_to_pixel[n]
        expect = fmap[r, c] if r >= 0 else np.zeros(3)
        assert np.array_equal(lifted[n], expect)
    with pytest.raises(ShapeError):
        lift_features(np.zeros((4, 4, 3)), pm)


@given(st.integers(1, 32), st.integers(0, 63))
def test_cutout_wraps(width, start):
    sensor = SensorSpec.uniform(8, 5.0, -20.0, 32, 50.0)
    az = np.linspace(-np.pi, np.pi, 200, endpoint=False) + 0.01
    pts = np.column_stack([np.cos(az) * 5, np.sin(az) * 5, -0.5 * np.ones_like(az), np.ones_like(az)])
    img, pm = project(PointCloud(pts), sensor)
    out, om = cutout(img, pm, width, start=start)
    assert out.width == width
    for j in range(width):
        assert np.array_equal(out.data[:, j], img.data[:, (start + j) % 32])
    kept = om.projected
    assert np.array_equal((pm.point_to_pixel[kept, 1] - start) % 32, om.point_to_pixel[kept, 1])
    assert kept.sum() == sum(1 for c in pm.point_to_pixel[:, 1] if (c - start) % 32 < width)


def test_cutout_bounds(street_scan, sensor32):
    img, pm = project(street_scan[0], sensor32)
    with pytest.raises(InvalidCutout):
        cutout(img, pm, 129, start=0)
    with pytest.raises(InvalidCutout):
        cutout(img, pm, 0, start=0)


def test_flip_consistent(street_scan, sensor32):
    img, pm = project(street_scan[0], sensor32)
    f, fm = flip_columns(img), flip_map(pm)
    assert np.array_equal(f.data[:, ::-1], img.data)
    lifted = lift_features(img.data, pm)
    assert np.array_equal(lift_features(f.data, fm), lifted)


def test_dropout_marks_invalid(street_scan, sensor32):
    img, pm = project(street_scan[0], sensor32)
    out, _ = augment2d(img, pm, np.random.default_rng(0), p_flip=0.0, dropout=DropoutSpec(6, 4, 8))
    dropped = img.valid & ~out.valid
    assert np.all(out.range[dropped] == INVALID_RANGE)
    assert not np.any(out.valid & ~img.valid)


def test_label_image(sensor32):
    cloud = cloud_of((1.0, 0.0, 0.0), (2.0, 0.0, 0.0))
    img, _ = project(cloud, sensor32)
    lab = img.label_image(LabelArray([3, 1], 4))
    assert (lab == 3).sum() == 1 and (lab == IGNORE).sum() == lab.size - 1


def test_normalize(street_scan, sensor32):
    img = compute_normals(project(street_scan[0], sensor32)[0])
    mean, std = channel_stats([img])
    out = normalize_channels(img, (mean, std))
    assert np.allclose(out.data[out.valid].mean(axis=0), 0.0, atol=1e-9)
    with pytest.raises(DegenerateStats):
        normalize_channels(img, (mean, np.zeros(5)))
    with pytest.raises(ShapeError):
        normalize_channels(img, (mean[:3], std[:3]))


def test_image_file_roundtrip(street_scan, sensor32):
    img = compute_normals(project(street_scan[0], sensor32)[0])
    blob = write_range_image(img)
    back = read_range_image(blob)
    assert np.array_equal(back.data, img.data.astype(np.float32))
    assert np.array_equal(back.valid, img.valid) and np.array_equal(back.point_index, img.point_index)
    assert write_range_image(back) == blob
    with pytest.raises(MalformedImage):
        read_range_image(blob[:-1])
