import numpy as np
import pytest

from lionxa import autodiff as ad
from lionxa.errors import CheckpointError, EmptyInput, ShapeError
from lionxa.lidar_io import PointCloud
from lionxa.networks import (DiscriminatorSet, FeatureDiscriminator, PredictionDiscriminator, Seg2DNet, Seg3DNet,
                             disc_forward, load_checkpoint, neighbor_matrix, save_checkpoint)
from lionxa.voxel import voxelize


def conv_block(cin, cout):
    return 9 * cin * cout + 2 * cout  # weights, gamma, beta


def test_parameter_counts():
    c = 6
    enc = conv_block(5, 16) + conv_block(16, 32) + conv_block(32, 64)
    dec = conv_block(128, 32) + conv_block(64, 16) + conv_block(32, 16)
    assert Seg2DNet(c).num_parameters() == enc + dec + 2 * (16 * c + c) == 75004
    assert Seg3DNet(c).num_parameters() == (4 * 32 + 32) + (32 * 64 + 64) + (128 * 16 + 16) + 2 * (16 * c + c) == 4540
    assert FeatureDiscriminator().num_parameters() == 2 * (9 * 16 * 16 + 16) + 17 == 4657
    assert PredictionDiscriminator(c).num_parameters() == (c * 32 + 32) + (32 * 32 + 32) + 33 == 1313


def test_seg2d_shapes_and_padding(rng):
    net = Seg2DNet(4, stages=(4, 8, 8), features=6)
    feats, main, mimic = net(rng.normal(size=(2, 12, 20, 5)))
    assert feats.shape == (2, 12, 20, 6) and main.shape == mimic.shape == (2, 12, 20, 4)
    with pytest.raises(ShapeError):
        net(np.zeros((1, 8, 8, 3)))


def test_dual_heads_independent(rng):
    net = Seg2DNet(3, stages=(4, 4, 4), features=4)
    x = rng.normal(size=(1, 8, 8, 5))
    main = net(x)[1].data.copy()
    net["mimic.w"].data[:] = 0.0
    net["mimic.b"].data[:] = 0.0
    assert np.array_equal(net(x)[1].data, main)
    assert not np.any(net(x)[2].data)
    net3 = Seg3DNet(3)
    pts, nb = rng.normal(size=(10, 4)), -np.ones((10, 6), dtype=int)
    main = net3(pts, nb)[1].data.copy()
    net3["mimic.w"].data[:] = 0.0
    assert np.array_equal(net3(pts, nb)[1].data, main)


def test_heads_parameter_disjoint():
    net = Seg2DNet(3)
    names = dict(net.named_parameters())
    assert {n for n in names if n.startswith("main")} == {"main.w", "main.b"}
    assert names["main.w"] is not names["mimic.w"]


def test_seg3d_permutation_invariant(rng):
    pts = rng.uniform(-1, 1, size=(200, 4))
    cloud = PointCloud(pts)
    vs = voxelize(cloud, 0.3)
    net = Seg3DNet(5)
    out = net.forward_voxels(vs, cloud)[1].data
    perm = rng.permutation(len(vs))
    inv = np.argsort(perm)
    nb = vs.neighbors()
    nb_p = np.where(nb[perm] >= 0, inv[np.maximum(nb[perm], 0)], -1)
    out_p = net(cloud.points[vs.representative][perm], nb_p)[1].data
    assert np.allclose(out_p, out[perm], atol=1e-12)


def test_neighbor_matrix_rows():
    nb = np.array([[1, -1, -1, -1, -1, -1], [0, 2, -1, -1, -1, -1], [-1] * 6])
    m = neighbor_matrix(nb).toarray()
    assert m.tolist() == [[0, 1, 0], [0.5, 0, 0.5], [0, 0, 0]]


def test_prediction_disc_permutation_and_segments(rng):
    d = PredictionDiscriminator(4)
    p = ad.softmax(ad.Tensor(rng.normal(size=(30, 4))))
    a = d(p).data
    perm = rng.permutation(30)
    assert np.allclose(d(ad.Tensor(p.data[perm])).data, a)
    seg = np.repeat([0, 1], 15)
    two = d(p, seg, 2).data
    assert two.shape == (2,) and np.all((two > 0) & (two < 1))
    assert two[0] == pytest.approx(d(ad.Tensor(p.data[:15])).data[0])
    with pytest.raises(EmptyInput):
        d(p, seg, 3)


def test_feature_disc_output(rng):
    d = FeatureDiscriminator(features=8)
    out = d(ad.Tensor(rng.normal(size=(3, 4, 6, 8)))).data
    assert out.shape == (3,) and np.all((out > 0) & (out < 1))
    with pytest.raises(ShapeError):
        d(ad.Tensor(np.zeros((1, 4, 4, 3))))


def test_disc_dispatch(rng):
    ds = DiscriminatorSet(4, features=8)
    p = ad.Tensor(np.full((5, 4), 0.25))
    assert disc_forward(ds, "s2d_t3d", p).shape == (1,)
    with pytest.raises(ShapeError):
        disc_forward(ds, "other", p)


def test_checkpoint_roundtrip(tmp_path):
    net = Seg3DNet(3, seed=4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, net)
    other = Seg3DNet(3, seed=9)
    other.load_state_dict(load_checkpoint(path))
    assert all(np.array_equal(a, b) for a, b in zip(other.state_dict().values(), net.state_dict().values()))
    ds = DiscriminatorSet(3)
    save_checkpoint(tmp_path / "d.ckpt", ds)
    assert set(load_checkpoint(tmp_path / "d.ckpt")) == set(ds.state_dict())


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, Seg3DNet(3))
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_load_state_rejects_mismatch():
    net = Seg3DNet(3)
    state = Seg3DNet(4).state_dict()
    with pytest.raises(CheckpointError):
        net.load_state_dict(state)
