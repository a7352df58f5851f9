"""Miniature segmentation networks and domain discriminators.

Seg2DNet is a three-stage conv encoder/decoder over NHWC range images,
Seg3DNet a per-point MLP over voxel representatives with 6-neighbourhood
mean aggregation. Both carry a main head and a parameter-disjoint mimicry
head. Discriminators end in a sigmoid and emit one probability per sample.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import CheckpointError, EmptyInput, ShapeError

FEATURES = 16
LEAK = 0.01
DISC_LEAK = 0.2
XYZ_SCALE = 0.1  # meters -> network units


class Module:
    def __init__(self, seed=0):
        self._params: dict[str, Parameter] = {}
        self._rng = np.random.default_rng(seed)

    def _he(self, name, shape, fan_in):
        w = self._rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        self._params[name] = Parameter(w, name=name)
        return self._params[name]

    def _const(self, name, shape, value):
        self._params[name] = Parameter(np.full(shape, value), name=name)
        return self._params[name]

    def named_parameters(self):
        return dict(self._params)

    def parameters(self):
        return list(self._params.values())

    def num_parameters(self):
        return int(sum(p.data.size for p in self._params.values()))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state_dict(self):
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self._params):
            missing = set(self._params) ^ set(state)
            raise CheckpointError(f"parameter names differ: {sorted(missing)[:5]}")
        for k, p in self._params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise CheckpointError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def __getitem__(self, name):
        return self._params[name]


def _conv_block(module, name, cin, cout):
    module._he(f"{name}.w", (3, 3, cin, cout), 9 * cin)
    module._const(f"{name}.gamma", (cout,), 1.0)
    module._const(f"{name}.beta", (cout,), 0.0)


class Seg2DNet(Module):
    """5-channel range image -> (features, main logits, mimicry logits), all NHWC."""

    STAGES = (16, 32, 64)

    def __init__(self, num_classes, in_channels=5, features=FEATURES, seed=0, stages=STAGES):
        super().__init__(seed)
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.features = features
        self.stages = tuple(stages)
        c1, c2, c3 = self.stages
        _conv_block(self, "enc1", in_channels, c1)
        _conv_block(self, "enc2", c1, c2)
        _conv_block(self, "enc3", c2, c3)
        _conv_block(self, "dec3", c3 + c3, c2)
        _conv_block(self, "dec2", c2 + c2, c1)
        _conv_block(self, "dec1", c1 + c1, features)
        for head in ("main", "mimic"):
            self._he(f"{head}.w", (1, 1, features, num_classes), features)
            self._const(f"{head}.b", (num_classes,), 0.0)

    def _block(self, name, x):
        p = self._params
        y = ad.conv2d(x, p[f"{name}.w"])
        y = ad.instance_norm_2d(y, p[f"{name}.gamma"], p[f"{name}.beta"])
        return ad.leaky_relu(y, LEAK)

    def forward(self, images):
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"expected (N,H,W,{self.in_channels}) input, got {x.shape}")
        n, h, w, _ = x.shape
        hp, wp = -(-h // 8) * 8, -(-w // 8) * 8
        if (hp, wp) != (h, w):
            padded = np.zeros((n, hp, wp, self.in_channels))
            padded[:, :h, :w] = x.data
            x = Tensor(padded)
        e1 = self._block("enc1", x)
        e2 = self._block("enc2", ad.max_pool2d(e1))
        e3 = self._block("enc3", ad.max_pool2d(e2))
        b = ad.max_pool2d(e3)
        d3 = self._block("dec3", ad.concat([ad.upsample2d(b), e3], axis=3))
        d2 = self._block("dec2", ad.concat([ad.upsample2d(d3), e2], axis=3))
        feats = self._block("dec1", ad.concat([ad.upsample2d(d2), e1], axis=3))
        if (hp, wp) != (h, w):
            feats = feats[:, :h, :w, :]
        p = self._params
        main = ad.conv2d(feats, p["main.w"], p["main.b"])
        mimic = ad.conv2d(feats, p["mimic.w"], p["mimic.b"])
        return feats, main, mimic

    __call__ = forward


class Seg3DNet(Module):
    """Per-point network over voxel representatives (xyz + remission)."""

    def __init__(self, num_classes, features=FEATURES, seed=0):
        super().__init__(seed)
        self.num_classes = num_classes
        self.features = features
        self._he("l1.w", (4, 32), 4)
        self._const("l1.b", (32,), 0.0)
        self._he("l2.w", (32, 64), 32)
        self._const("l2.b", (64,), 0.0)
        self._he("l3.w", (128, features), 128)
        self._const("l3.b", (features,), 0.0)
        for head in ("main", "mimic"):
            self._he(f"{head}.w", (features, num_classes), features)
            self._const(f"{head}.b", (num_classes,), 0.0)

    @staticmethod
    def inputs(points):
        """(V, 4) xyz+remission rows -> network input with xyz rescaled."""
        x = np.array(points, dtype=np.float64)
        x[:, :3] *= XYZ_SCALE
        return x

    def forward(self, points, neighbors):
        """points: (V,4) xyz+remission of representatives; neighbors: (V,6), -1 = empty."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 4:
            raise ShapeError(f"expected (V,4) points, got {points.shape}")
        v = points.shape[0]
        if v == 0:
            raise EmptyInput("no voxels")
        neighbors = np.asarray(neighbors, dtype=np.int64)
        if neighbors.shape != (v, 6):
            raise ShapeError(f"expected ({v},6) neighbour table, got {neighbors.shape}")
        p = self._params
        x = Tensor(self.inputs(points))
        h = ad.leaky_relu(ad.linear(x, p["l1.w"], p["l1.b"]), LEAK)
        h = ad.leaky_relu(ad.linear(h, p["l2.w"], p["l2.b"]), LEAK)
        agg = neighbor_mean(h, neighbors)
        feats = ad.leaky_relu(ad.linear(ad.concat([h, agg], axis=1), p["l3.w"], p["l3.b"]), LEAK)
        main = ad.linear(feats, p["main.w"], p["main.b"])
        mimic = ad.linear(feats, p["mimic.w"], p["mimic.b"])
        return feats, main, mimic

    __call__ = forward

    def forward_voxels(self, voxels, cloud):
        if len(voxels) == 0:
            raise EmptyInput("empty voxel set")
        return self.forward(cloud.points[voxels.representative], voxels.neighbors())


def neighbor_mean(h, neighbors):
    """Mean of the rows of ``h`` at each voxel's occupied neighbours (zeros if none)."""
    return ad.sparse_matmul(neighbor_matrix(neighbors), h)


def neighbor_matrix(neighbors):
    """Row-normalised (V,V) adjacency built from a (V,6) neighbour table."""
    v = neighbors.shape[0]
    rows, slots = np.nonzero(neighbors >= 0)
    cols = neighbors[rows, slots]
    count = np.bincount(rows, minlength=v).astype(np.float64)
    vals = 1.0 / count[rows]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(v, v))


class FeatureDiscriminator(Module):
    """D over (N,H,W,F) 2D feature maps -> (N,) probability of 'target'."""

    def __init__(self, features=FEATURES, width=16, seed=0):
        super().__init__(seed)
        self.features = features
        self._he("c1.w", (3, 3, features, width), 9 * features)
        self._const("c1.b", (width,), 0.0)
        self._he("c2.w", (3, 3, width, width), 9 * width)
        self._const("c2.b", (width,), 0.0)
        self._he("c3.w", (1, 1, width, 1), width)
        self._const("c3.b", (1,), 0.0)

    def forward(self, feats):
        if feats.ndim != 4 or feats.shape[3] != self.features:
            raise ShapeError(f"expected (N,H,W,{self.features}) features, got {feats.shape}")
        p = self._params
        h = ad.leaky_relu(ad.conv2d(feats, p["c1.w"], p["c1.b"]), DISC_LEAK)
        h = ad.leaky_relu(ad.conv2d(h, p["c2.w"], p["c2.b"]), DISC_LEAK)
        h = ad.conv2d(h, p["c3.w"], p["c3.b"])
        n, hh, ww, _ = h.shape
        logit = ad.mul(ad.sum_axis(ad.reshape(h, (n, hh * ww)), 1), 1.0 / (hh * ww))
        return ad.sigmoid(logit)

    __call__ = forward


class PredictionDiscriminator(Module):
    """D over per-point class distributions, mean-pooled per sample."""

    def __init__(self, num_classes, width=32, seed=0):
        super().__init__(seed)
        self.num_classes = num_classes
        self._he("l1.w", (num_classes, width), num_classes)
        self._const("l1.b", (width,), 0.0)
        self._he("l2.w", (width, width), width)
        self._const("l2.b", (width,), 0.0)
        self._he("l3.w", (width, 1), width)
        self._const("l3.b", (1,), 0.0)

    def forward(self, probs, segments=None, n_samples=None):
        """probs: (P,C) tensor; segments: sample id per row (default: one sample)."""
        if probs.ndim != 2 or probs.shape[1] != self.num_classes:
            raise ShapeError(f"expected (P,{self.num_classes}) probabilities, got {probs.shape}")
        if probs.shape[0] == 0:
            raise EmptyInput("no points")
        if segments is None:
            segments = np.zeros(probs.shape[0], dtype=np.int64)
        segments = np.asarray(segments, dtype=np.int64)
        if n_samples is None:
            n_samples = int(segments.max()) + 1
        p = self._params
        h = ad.leaky_relu(ad.linear(probs, p["l1.w"], p["l1.b"]), DISC_LEAK)
        h = ad.leaky_relu(ad.linear(h, p["l2.w"], p["l2.b"]), DISC_LEAK)
        h = ad.linear(h, p["l3.w"], p["l3.b"])
        counts = np.bincount(segments, minlength=n_samples).astype(np.float64)
        if np.any(counts == 0):
            raise EmptyInput("a sample has no points")
        pooled = ad.mul(ad.scatter_rows(h, segments, n_samples), (1.0 / counts)[:, None])
        return ad.sigmoid(ad.reshape(pooled, (n_samples,)))

    __call__ = forward


class DiscriminatorSet:
    """The feature discriminator and the two mixed-modality prediction discriminators."""

    def __init__(self, num_classes, features=FEATURES, seed=0):
        self.feat = FeatureDiscriminator(features, seed=seed)
        self.s2d_t3d = PredictionDiscriminator(num_classes, seed=seed + 1)
        self.s3d_t2d = PredictionDiscriminator(num_classes, seed=seed + 2)

    def modules(self):
        return {"feat": self.feat, "s2d_t3d": self.s2d_t3d, "s3d_t2d": self.s3d_t2d}

    def parameters(self):
        return [p for m in self.modules().values() for p in m.parameters()]

    def zero_grad(self):
        for m in self.modules().values():
            m.zero_grad()

    def state_dict(self):
        return {f"{k}/{n}": v for k, m in self.modules().items() for n, v in m.state_dict().items()}

    def load_state_dict(self, state):
        for k, m in self.modules().items():
            prefix = f"{k}/"
            m.load_state_dict({n[len(prefix):]: v for n, v in state.items() if n.startswith(prefix)})


def disc_forward(discriminators, kind, inputs, segments=None, n_samples=None):
    """Dispatch by kind: 'feat', 's2d_t3d' or 's3d_t2d'."""
    mods = discriminators.modules()
    if kind not in mods:
        raise ShapeError(f"unknown discriminator kind {kind!r}")
    if kind == "feat":
        return mods[kind](inputs)
    return mods[kind](inputs, segments, n_samples)


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"LXCK"
_VERSION = 1


def save_checkpoint(path, state):
    """state: mapping name -> float array (e.g. ``module.state_dict()``)."""
    if isinstance(state, (Module, DiscriminatorSet)):
        state = state.state_dict()
    chunks = [_MAGIC, struct.pack("<II", _VERSION, len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(str(exc)) from None
    if blob[:4] != _MAGIC:
        raise CheckpointError("not a checkpoint file")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 12
        state = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + ln].decode("utf-8")
            off += ln
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            state[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(blob):
        raise CheckpointError("trailing bytes in checkpoint")
    return state
