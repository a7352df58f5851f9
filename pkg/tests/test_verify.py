import numpy as np

from lionxa import verify as V
from lionxa.lidar_io import PointCloud
from lionxa.voxel import voxelize


def test_suites_pass():
    checks = V.run("losses") + V.geometry_suite(scans=2)
    assert all(c.ok for c in checks)
    assert all(c.line().startswith("PASS") for c in checks)


def test_voxel_oracle_catches_bad_representative(rng):
    cloud = PointCloud(rng.uniform(0, 1, size=(80, 4)))
    vs = voxelize(cloud, 0.3)
    assert V._voxel_mismatch(cloud, vs, 0.3) == 0
    multi = np.nonzero(np.bincount(vs.point_to_voxel) > 1)[0][0]
    later = np.nonzero(vs.point_to_voxel == multi)[0][-1]
    vs.representative[multi] = later
    assert V._voxel_mismatch(cloud, vs, 0.3) > 0


def test_plane_oracle(rng):
    assert V._plane_error(rng, 0) < 1e-9


def test_network_gradchecks_small():
    names = {f"grad {n}" for n in V.network_cases()}
    checks = [c for c in V.gradcheck_suite(seeds=1) if c.name in names]
    assert len(checks) == 3 and all(c.ok for c in checks)
