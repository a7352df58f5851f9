"""Voxel quantisation with one representative point per occupied cell."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidVoxelSize, MalformedImage
from .lidar_io import PointCloud

VOXEL_SIZE = 0.05
_OFFSETS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64)
_BITS = 21  # per-axis key bits when packing keys into one int64
_BIAS = 1 << (_BITS - 1)


@dataclass(eq=False)
class VoxelSet:
    keys: np.ndarray  # (V, 3) int64, sorted lexicographically
    representative: np.ndarray  # (V,) lowest point index in each voxel
    point_to_voxel: np.ndarray  # (N,) voxel index per point
    voxel_size: float

    def __len__(self):
        return self.keys.shape[0]

    def __eq__(self, other):
        return (isinstance(other, VoxelSet) and self.voxel_size == other.voxel_size
                and np.array_equal(self.keys, other.keys)
                and np.array_equal(self.representative, other.representative)
                and np.array_equal(self.point_to_voxel, other.point_to_voxel))

    def neighbors(self):
        """(V, 6) index of the face-adjacent occupied voxel, -1 where empty."""
        codes = pack_keys(self.keys)
        order = np.argsort(codes)
        sorted_codes = codes[order]
        out = np.full((len(self), 6), -1, dtype=np.int64)
        for j, off in enumerate(_OFFSETS):
            q = pack_keys(self.keys + off)
            pos = np.clip(np.searchsorted(sorted_codes, q), 0, len(codes) - 1)
            hit = sorted_codes[pos] == q
            out[hit, j] = order[pos[hit]]
        return out

    def gather(self, per_voxel):
        """Broadcast per-voxel values back to every point."""
        return np.asarray(per_voxel)[self.point_to_voxel]

    def subset_points(self, cloud: PointCloud):
        return cloud.subset(self.representative)


def pack_keys(keys):
    k = np.asarray(keys, dtype=np.int64) + _BIAS
    return (k[:, 0] << (2 * _BITS)) | (k[:, 1] << _BITS) | k[:, 2]


def voxelize(cloud: PointCloud, voxel_size: float = VOXEL_SIZE) -> VoxelSet:
    if not voxel_size > 0:
        raise InvalidVoxelSize(f"voxel size must be positive, got {voxel_size}")
    keys = np.floor(cloud.xyz / voxel_size).astype(np.int64)
    if len(cloud) and np.abs(keys).max() >= _BIAS:
        raise InvalidVoxelSize("cloud extent too large for this voxel size")
    # np.unique returns the first occurrence, i.e. the lowest point index
    uniq, first, inverse = np.unique(keys.reshape(-1, 3), axis=0, return_index=True, return_inverse=True)
    return VoxelSet(uniq.reshape(-1, 3), first.astype(np.int64), inverse.reshape(-1).astype(np.int64),
                    float(voxel_size))


@dataclass(frozen=True)
class Aug3DSpec:
    rotation: float = np.pi  # max |angle| about z [rad]
    translation: float = 0.2  # max |offset| per horizontal axis [m]
    p_flip_x: float = 0.5
    p_flip_y: float = 0.5


def augment3d(cloud: PointCloud, rng, spec: Aug3DSpec = Aug3DSpec()) -> PointCloud:
    """Random rotation about z, xy translation and axis flips; remission untouched."""
    theta = rng.uniform(-spec.rotation, spec.rotation)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    flip = np.diag([-1.0 if rng.random() < spec.p_flip_x else 1.0,
                    -1.0 if rng.random() < spec.p_flip_y else 1.0, 1.0])
    shift = np.append(rng.uniform(-spec.translation, spec.translation, size=2), 0.0)
    return cloud.with_xyz(cloud.xyz @ (flip @ rot).T + shift)


_VOX_MAGIC = b"LXVX"


def write_voxels(vs: VoxelSet) -> bytes:
    head = _VOX_MAGIC + struct.pack("<IId", len(vs), len(vs.point_to_voxel), vs.voxel_size)
    return b"".join([head, np.ascontiguousarray(vs.keys, "<i8").tobytes(),
                     np.ascontiguousarray(vs.representative, "<i8").tobytes(),
                     np.ascontiguousarray(vs.point_to_voxel, "<i8").tobytes()])


def read_voxels(blob: bytes) -> VoxelSet:
    if len(blob) < 20 or blob[:4] != _VOX_MAGIC:
        raise MalformedImage("not a voxel file")
    v, n, size = struct.unpack_from("<IId", blob, 4)
    if len(blob) != 20 + 8 * (4 * v + n):
        raise MalformedImage("truncated voxel file")
    off = 20
    keys = np.frombuffer(blob, "<i8", 3 * v, off).reshape(v, 3).astype(np.int64)
    off += 24 * v
    rep = np.frombuffer(blob, "<i8", v, off).astype(np.int64)
    off += 8 * v
    p2v = np.frombuffer(blob, "<i8", n, off).astype(np.int64)
    return VoxelSet(keys, rep, p2v, size)
