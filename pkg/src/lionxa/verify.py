"""Self-check suites run by ``lionxa verify`` (and reused by the tests).

Each check returns a ``Check(name, ok, value, bound)``; a suite is a list.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as L
from .lidar_io import PointCloud, SensorSpec
from .networks import DiscriminatorSet, Seg2DNet, Seg3DNet
from .projection import compute_normals, lift_features, project
from .scene import Plane, Scene, StreetParams, simulate_scan, synth_scene
from .voxel import voxelize

GRAD_TOL = 1e-4


@dataclass
class Check:
    name: str
    ok: bool
    value: float
    bound: float

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.value:.3g} (bound {self.bound:g})"


def _le(name, value, bound):
    return Check(name, bool(value <= bound), float(value), bound)


# ---------------------------------------------------------------- autodiff


def _proj(shape, rng):
    return rng.normal(size=shape)


def op_cases():
    """name -> builder(rng) returning (fn, point) for grad_check."""

    def unary(op, shape=(3, 4), positive=False):
        def build(rng):
            x = rng.normal(size=shape)
            if positive:
                x = np.abs(x) + 0.5
            r = _proj(op(ad.Tensor(x)).shape, rng)
            return (lambda t: ad.sum_(ad.mul(op(t), r))), x
        return build

    def binary(op, shape=(3, 4), which=0):
        def build(rng):
            a, b = rng.normal(size=shape), rng.normal(size=shape)
            r = _proj(shape, rng)
            if which == 0:
                return (lambda t: ad.sum_(ad.mul(op(t, ad.Tensor(b)), r))), a
            return (lambda t: ad.sum_(ad.mul(op(ad.Tensor(a), t), r))), b
        return build

    def matmul_case(which):
        def build(rng):
            a, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 2))
            r = _proj((3, 2), rng)
            if which == 0:
                return (lambda t: ad.sum_(ad.mul(ad.matmul(t, ad.Tensor(b)), r))), a
            return (lambda t: ad.sum_(ad.mul(ad.matmul(ad.Tensor(a), t), r))), b
        return build

    def conv_case(k, which):
        def build(rng):
            x, w, b = rng.normal(size=(2, 4, 6, 3)), rng.normal(size=(k, k, 3, 2)), rng.normal(size=2)
            r = _proj((2, 4, 6, 2), rng)
            if which == "x":
                return (lambda t: ad.sum_(ad.mul(ad.conv2d(t, ad.Tensor(w), ad.Tensor(b)), r))), x
            if which == "w":
                return (lambda t: ad.sum_(ad.mul(ad.conv2d(ad.Tensor(x), t, ad.Tensor(b)), r))), w
            return (lambda t: ad.sum_(ad.mul(ad.conv2d(ad.Tensor(x), ad.Tensor(w), t), r))), b
        return build

    def inorm_case(which):
        def build(rng):
            x, g, b = rng.normal(size=(2, 3, 4, 3)), rng.normal(size=3), rng.normal(size=3)
            r = _proj(x.shape, rng)
            args = [ad.Tensor(x), ad.Tensor(g), ad.Tensor(b)]
            idx = {"x": 0, "gamma": 1, "beta": 2}[which]
            point = [x, g, b][idx]

            def fn(t):
                a = list(args)
                a[idx] = t
                return ad.sum_(ad.mul(ad.instance_norm_2d(*a), r))
            return fn, point
        return build

    def gather_case(rng):
        x = rng.normal(size=(5, 3))
        idx = np.array([0, 2, 2, -1, 4, 1])
        r = _proj((6, 3), rng)
        return (lambda t: ad.sum_(ad.mul(ad.gather_rows(t, idx), r))), x

    def scatter_case(rng):
        x = rng.normal(size=(6, 3))
        idx = np.array([0, 2, 2, -1, 3, 1])
        r = _proj((4, 3), rng)
        return (lambda t: ad.sum_(ad.mul(ad.scatter_rows(t, idx, 4), r))), x

    def sparse_case(rng):
        from scipy import sparse
        m = sparse.random(4, 5, density=0.5, random_state=int(rng.integers(1 << 31)), format="csr")
        x = rng.normal(size=(5, 3))
        r = _proj((4, 3), rng)
        return (lambda t: ad.sum_(ad.mul(ad.sparse_matmul(m, t), r))), x

    def concat_case(rng):
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 4))
        r = _proj((3, 6), rng)
        return (lambda t: ad.sum_(ad.mul(ad.concat([t, ad.Tensor(b), t], axis=1)[:, :6], r))), a

    def bias_case(which):
        def build(rng):
            x, b = rng.normal(size=(4, 3)), rng.normal(size=3)
            r = _proj((4, 3), rng)
            if which == 0:
                return (lambda t: ad.sum_(ad.mul(ad.bias_add(t, ad.Tensor(b)), r))), x
            return (lambda t: ad.sum_(ad.mul(ad.bias_add(ad.Tensor(x), t), r))), b
        return build

    def linear_case(which):
        def build(rng):
            x, w, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
            r = _proj((4, 2), rng)
            args = [ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)]

            def fn(t):
                a = list(args)
                a[which] = t
                return ad.sum_(ad.mul(ad.linear(*a), r))
            return fn, [x, w, b][which]
        return build

    return {
        "add": binary(ad.add), "add/b": binary(ad.add, which=1),
        "sub": binary(ad.sub), "sub/b": binary(ad.sub, which=1),
        "mul": binary(ad.mul), "mul/b": binary(ad.mul, which=1),
        "neg": unary(ad.neg),
        "exp": unary(ad.exp),
        "log": unary(ad.log, positive=True),
        "relu": unary(ad.relu),
        "leaky_relu": unary(lambda t: ad.leaky_relu(t, 0.2)),
        "sigmoid": unary(ad.sigmoid),
        "sum": unary(lambda t: ad.mul(ad.sum_(t), 1.0)),
        "sum_axis": unary(lambda t: ad.sum_axis(t, 0)),
        "mean": unary(ad.mean),
        "mean_axis": unary(lambda t: ad.mean_axis(t, 1)),
        "reshape": unary(lambda t: ad.reshape(t, (4, 3))),
        "slice": unary(lambda t: t[1:, ::2]),
        "softmax": unary(ad.softmax),
        "log_softmax": unary(ad.log_softmax),
        "matmul/a": matmul_case(0), "matmul/b": matmul_case(1),
        "bias_add/x": bias_case(0), "bias_add/b": bias_case(1),
        "linear/x": linear_case(0), "linear/w": linear_case(1), "linear/b": linear_case(2),
        "conv2d_k3/x": conv_case(3, "x"), "conv2d_k3/w": conv_case(3, "w"), "conv2d_k3/b": conv_case(3, "b"),
        "conv2d_k1/x": conv_case(1, "x"), "conv2d_k1/w": conv_case(1, "w"),
        "max_pool2d": unary(ad.max_pool2d, shape=(2, 4, 6, 3)),
        "upsample2d": unary(ad.upsample2d, shape=(2, 2, 3, 3)),
        "instance_norm/x": inorm_case("x"), "instance_norm/gamma": inorm_case("gamma"),
        "instance_norm/beta": inorm_case("beta"),
        "gather_rows": gather_case, "scatter_rows": scatter_case, "sparse_matmul": sparse_case,
        "concat": concat_case,
    }


def loss_cases():
    c = 4

    def seg3d(rng):
        labels = rng.integers(-1, c, size=7)
        labels[0] = 1
        w = rng.uniform(0.5, 2.0, size=c)
        return (lambda t: L.seg_loss_3d(t, labels, w)), rng.normal(size=(7, c))

    def seg2d(rng):
        lab = rng.integers(-1, c, size=(2, 3, 4))
        lab[0, 0, 0] = 2
        w = rng.uniform(0.5, 2.0, size=c)
        return (lambda t: L.seg_loss_2d(t, lab, w)), rng.normal(size=(2, 3, 4, c))

    def xm(rng):
        p2, p3 = rng.normal(size=(5, c)), rng.normal(size=(5, c))
        m3 = rng.normal(size=(5, c))
        return (lambda t: L.cross_modal_loss(ad.softmax(ad.Tensor(p2)), ad.softmax(t),
                                             ad.softmax(ad.Tensor(p3)), ad.softmax(ad.Tensor(m3)))), \
            rng.normal(size=(5, c))

    def total(rng):
        w = L.LossWeights(lambda_s=0.8, lambda_tl=0.3, lambda_t=0.1, lambda_p=0.5)
        labels = rng.integers(0, c, size=6)
        p = ad.softmax(ad.Tensor(rng.normal(size=(6, c))))

        def fn(t):
            sup = L.seg_loss_3d(t, labels)
            xm_ = L.kl_divergence(p, ad.softmax(t))
            return L.total_loss(sup, xm_, xm_, xm_, w)
        return fn, rng.normal(size=(6, c))

    def disc(rng):
        tgt = ad.Tensor(rng.uniform(0.05, 0.95, size=3))
        return (lambda t: L.discriminator_loss(t, tgt, 0.3, 0.7)), rng.uniform(0.05, 0.95, size=3)

    def gen(rng):
        return (lambda t: L.generator_adv_loss(t, 0.07)), rng.uniform(0.05, 0.95, size=3)

    return {"seg_loss_3d": seg3d, "seg_loss_2d": seg2d, "cross_modal": xm, "total": total,
            "discriminator": disc, "generator": gen}


def network_cases():
    """name -> builder(rng) returning (loss_fn, params, max_coords)."""
    c = 3

    def net2d(rng):
        net = Seg2DNet(c, seed=int(rng.integers(1 << 31)))
        x = rng.normal(size=(1, 8, 8, 5))
        lab = rng.integers(0, c, size=(1, 8, 8))
        r = rng.normal(size=(1, 8, 8, net.features))

        def fn():
            f, main, mimic = net(x)
            return (L.seg_loss_2d(main, lab) + 0.5 * L.seg_loss_2d(mimic, lab)
                    + ad.mean(ad.mul(f, r)))
        return fn, net.parameters(), 3

    def net3d(rng):
        net = Seg3DNet(c, seed=int(rng.integers(1 << 31)))
        pts = np.column_stack([rng.uniform(0, 0.2, size=(12, 3)), rng.uniform(0, 1, size=12)])
        vs = voxelize(PointCloud(pts), 0.05)
        cloud = PointCloud(pts)
        lab = rng.integers(0, c, size=len(vs))

        def fn():
            _, main, mimic = net.forward_voxels(vs, cloud)
            return L.seg_loss_3d(main, lab) + 0.5 * L.seg_loss_3d(mimic, lab)
        return fn, net.parameters(), 4

    def discs(rng):
        ds = DiscriminatorSet(c, seed=int(rng.integers(1 << 31)))
        fs, ft = rng.normal(size=(2, 4, 4, 16)), rng.normal(size=(2, 4, 4, 16))
        ps = ad.softmax(ad.Tensor(rng.normal(size=(6, c))))
        pt = ad.softmax(ad.Tensor(rng.normal(size=(6, c))))
        seg = np.array([0, 0, 0, 1, 1, 1])

        def fn():
            return (L.discriminator_loss(ds.feat(ad.Tensor(fs)), ds.feat(ad.Tensor(ft)), 0.1, 0.2)
                    + L.discriminator_loss(ds.s3d_t2d(ps, seg), ds.s3d_t2d(pt, seg), 0.1, 0.2)
                    + L.discriminator_loss(ds.s2d_t3d(ps, seg), ds.s2d_t3d(pt, seg), 0.1, 0.2))
        return fn, ds.parameters(), 4

    return {"seg2d_net": net2d, "seg3d_net": net3d, "discriminators": discs}


def gradcheck_suite(seeds=3, networks=True):
    checks = []
    for name, build in {**op_cases(), **loss_cases()}.items():
        worst = 0.0
        for s in range(seeds):
            fn, point = build(np.random.default_rng(1000 + s))
            worst = max(worst, ad.grad_check(fn, point))
        checks.append(_le(f"grad {name}", worst, GRAD_TOL))
    if networks:
        for name, build in network_cases().items():
            worst = 0.0
            for s in range(seeds):
                rng = np.random.default_rng(2000 + s)
                fn, params, k = build(rng)
                worst = max(worst, ad.check_parameters(fn, params, max_coords=k, rng=rng))
            checks.append(_le(f"grad {name}", worst, GRAD_TOL))
    return checks


# ---------------------------------------------------------------- geometry


def _scan(seed, beams=32, width=128):
    sensor = SensorSpec.uniform(beams, 10.0, -30.0, width, 60.0, 1.8)
    scene = synth_scene(seed, StreetParams().scene_params())
    cloud, _ = simulate_scan(scene, sensor, seed)
    return cloud, sensor


def _voxel_mismatch(cloud, vs, size):
    """Count disagreements with a dictionary-based grouping of the points."""
    groups = {}
    for i, p in enumerate(cloud.xyz):
        groups.setdefault(tuple(int(v) for v in np.floor(p / size)), []).append(i)
    bad = abs(len(groups) - len(vs))
    members = {}
    for i, v in enumerate(vs.point_to_voxel):
        members.setdefault(int(v), []).append(i)
    for v, key in enumerate(map(tuple, vs.keys.tolist())):
        g = groups.get(key, [])
        bad += int(members.get(v, []) != g) + int(not g or vs.representative[v] != g[0])
    return bad


def _plane_error(rng, seed):
    z = float(rng.uniform(-3.0, -1.0))
    beams = int(rng.integers(16, 48))
    sensor = SensorSpec.uniform(beams, -2.0, -30.0, int(rng.integers(128, 384)), 80.0)
    cloud, _ = simulate_scan(Scene((Plane(z, 40),)), sensor, seed)
    img = compute_normals(project(cloud, sensor)[0])
    n = img.normals[np.linalg.norm(img.normals, axis=-1) > 0]
    if len(n) == 0:
        return np.inf
    return float(np.abs(n - np.array([0.0, 0.0, 1.0])).max())


def geometry_suite(scans=5, seed=0):
    part_err = rep_err = lift_err = vox_err = normal_err = 0.0
    rng = np.random.default_rng(seed)
    for i in range(scans):
        cloud, sensor = _scan(seed + i)
        # project into a coarser grid so pixels collect several points
        w = int(rng.integers(16, 64))
        img, pm = project(cloud, sensor, w)
        p2p = pm.pixel_to_points()
        part_err += abs(sum(len(x) for x in p2p) + len(pm.unprojected) - len(cloud))
        part_err += len(cloud) - len(set(pm.unprojected.tolist()).union(*map(set, p2p)))
        r = np.linalg.norm(cloud.xyz, axis=1)
        for k, members in enumerate(p2p):
            if members:
                rep_err = max(rep_err, abs(img.range.reshape(-1)[k] - r[members].min()))
        fmap = rng.normal(size=(img.height, img.width, 3))
        lifted = lift_features(fmap, pm)
        brute = np.zeros_like(lifted)
        for n in range(len(cloud)):
            row, col = pm.point_to_pixel[n]
            if row >= 0:
                brute[n] = fmap[row, col]
        lift_err = max(lift_err, float(np.abs(lifted - brute).max()))
        size = float(rng.uniform(0.05, 0.5))
        vox_err += _voxel_mismatch(cloud, voxelize(cloud, size), size)
        normal_err = max(normal_err, _plane_error(rng, seed + i))
    return [
        _le("projection partition", part_err, 0),
        _le("min-range representative", rep_err, 0),
        _le("lift_features vs brute force", lift_err, 0),
        _le("voxel dedup vs brute force", vox_err, 0),
        _le("plane normal recovery", normal_err, 1e-3),
    ]


# ---------------------------------------------------------------- losses


def losses_suite(pairs=1000, seed=0):
    rng = np.random.default_rng(seed)
    checks = []
    worst = 0.0
    for c in (2, 3, 6, 12):
        logits = ad.Tensor(np.zeros((5, c)))
        worst = max(worst, abs(float(L.seg_loss_3d(logits, rng.integers(0, c, 5)).data) - np.log(c)))
    checks.append(_le("uniform CE = ln C", worst, 1e-9))
    p = ad.softmax(ad.Tensor(rng.normal(size=(8, 5))))
    checks.append(_le("KL(P, P)", abs(float(L.kl_divergence(p, p).data)), 1e-12))
    most_negative = 0.0
    for _ in range(pairs):
        a = rng.dirichlet(np.ones(6), size=3)
        b = rng.dirichlet(np.ones(6), size=3)
        most_negative = min(most_negative, float(L.kl_divergence(a, ad.Tensor(b)).data))
    checks.append(_le("KL >= 0 (negated minimum)", 0.0 - most_negative + 0.0, 0.0))
    half = ad.Tensor(np.full(4, 0.5))
    checks.append(_le("BCE(0.5) = ln 2", abs(float(L.bce(half, 1).data) - np.log(2)), 1e-12))
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, 6)
    w = rng.uniform(0.5, 2, 4)
    shift = rng.normal(size=(6, 1)) * 10 * np.ones((1, 4))
    a = float(L.seg_loss_3d(ad.Tensor(logits), labels, w).data)
    b = float(L.seg_loss_3d(ad.Tensor(logits + shift), labels, w).data)
    img = rng.normal(size=(2, 3, 4, 4))
    lab = rng.integers(0, 4, (2, 3, 4))
    img_shift = img + rng.normal(size=(2, 3, 4, 1)) * 10
    c = float(L.seg_loss_2d(ad.Tensor(img), lab, w).data)
    d = float(L.seg_loss_2d(ad.Tensor(img_shift), lab, w).data)
    checks.append(_le("CE shift invariance", max(abs(a - b), abs(c - d)), 1e-9))
    return checks


SUITES = {"gradcheck": gradcheck_suite, "geometry": geometry_suite, "losses": losses_suite}


def run(suite="all"):
    names = list(SUITES) if suite == "all" else [suite]
    return [c for n in names for c in SUITES[n]()]
