"""Spherical range-image projection, normals, and the pixel<->point maps.

Channel order is (range, remission, normal_x, normal_y, normal_z). Column
c covers azimuths [-pi + 2*pi*c/W, -pi + 2*pi*(c+1)/W), so azimuth 0 falls
in column W/2; row h is the sensor beam nearest to the point's elevation.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .errors import DegenerateStats, EmptyCloud, InvalidCutout, MalformedImage, ShapeError
from .lidar_io import IGNORE, PointCloud, SensorSpec

CHANNELS = ("range", "remission", "normal_x", "normal_y", "normal_z")
INVALID_RANGE = -1.0


@dataclass(eq=False)
class PixelIndexMap:
    point_to_pixel: np.ndarray  # (N, 2) int64 (row, col); (-1, -1) = unprojected
    point_range: np.ndarray  # (N,) float64, used for representative ordering
    height: int
    width: int

    @classmethod
    def build(cls, rows, cols, ranges, height, width):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        proj = rows >= 0
        p2p = np.column_stack([np.where(proj, rows, -1), np.where(proj, cols, -1)])
        return cls(p2p, np.asarray(ranges, dtype=np.float64), height, width)

    @cached_property
    def _csr(self):
        # pixel, then range, then point index (lexsort keys are last-major)
        idx = np.nonzero(self.projected)[0]
        flat = self.flat_index()[idx]
        order = idx[np.lexsort((idx, self.point_range[idx], flat))]
        counts = np.bincount(flat, minlength=self.height * self.width)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return order, offsets

    @property
    def order(self):
        """Projected point indices grouped by pixel, nearest first."""
        return self._csr[0]

    @property
    def offsets(self):
        """(H*W + 1,) CSR offsets into ``order``."""
        return self._csr[1]

    def __len__(self):
        return self.point_to_pixel.shape[0]

    @property
    def projected(self):
        return self.point_to_pixel[:, 0] >= 0

    @property
    def unprojected(self):
        return np.nonzero(~self.projected)[0]

    def flat_index(self):
        """Per-point flat pixel index, -1 for unprojected points."""
        r, c = self.point_to_pixel[:, 0], self.point_to_pixel[:, 1]
        return np.where(r >= 0, r * self.width + c, -1)

    def points_in(self, row, col):
        k = row * self.width + col
        return self.order[self.offsets[k]:self.offsets[k + 1]]

    def pixel_to_points(self):
        return [self.order[self.offsets[k]:self.offsets[k + 1]].tolist() for k in range(self.height * self.width)]

    def representatives(self):
        """(H, W) representative (nearest) point per pixel, -1 where empty."""
        rep = np.full(self.height * self.width, -1, dtype=np.int64)
        nonempty = self.offsets[1:] > self.offsets[:-1]
        rep[nonempty] = self.order[self.offsets[:-1][nonempty]]
        return rep.reshape(self.height, self.width)

    def remap(self, rows, cols, width=None):
        return PixelIndexMap.build(rows, cols, self.point_range, self.height, width or self.width)


@dataclass(eq=False)
class RangeImage:
    data: np.ndarray  # (H, W, 5)
    valid: np.ndarray  # (H, W) bool
    point_index: np.ndarray  # (H, W) representative point, -1 if none
    xyz: np.ndarray  # (H, W, 3) coordinates of the representative (not a network channel)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def range(self):
        return self.data[..., 0]

    @property
    def normals(self):
        return self.data[..., 2:5]

    def copy(self):
        return RangeImage(self.data.copy(), self.valid.copy(), self.point_index.copy(), self.xyz.copy())

    def __eq__(self, other):
        return (isinstance(other, RangeImage) and np.array_equal(self.data, other.data)
                and np.array_equal(self.valid, other.valid)
                and np.array_equal(self.point_index, other.point_index)
                and np.array_equal(self.xyz, other.xyz))

    def take_columns(self, cols):
        return RangeImage(self.data[:, cols].copy(), self.valid[:, cols].copy(),
                          self.point_index[:, cols].copy(), self.xyz[:, cols].copy())

    def label_image(self, labels):
        """Per-pixel label of the representative point; IGNORE on invalid pixels."""
        lab = np.asarray(labels.labels if hasattr(labels, "labels") else labels)
        out = np.full(self.point_index.shape, IGNORE, dtype=np.int64)
        ok = self.valid & (self.point_index >= 0)
        out[ok] = lab[self.point_index[ok]]
        return out


def pixel_coords(xyz, sensor: SensorSpec, width: int):
    """(row, col, range, in_fov) for each point under the projection convention."""
    xyz = np.asarray(xyz, dtype=np.float64)
    r = np.linalg.norm(xyz, axis=1)
    safe = np.where(r > 0, r, 1.0)
    elev = np.arcsin(np.clip(xyz[:, 2] / safe, -1.0, 1.0))
    az = np.arctan2(xyz[:, 1], xyz[:, 0])
    col = np.floor((az + np.pi) / (2 * np.pi) * width).astype(np.int64)
    col = np.clip(col, 0, width - 1)
    row = nearest_beam(elev, sensor.elevations)
    in_fov = (r > 0) & (elev >= sensor.fov_down) & (elev <= sensor.fov_up)
    return row, col, r, in_fov


def nearest_beam(elev, beams):
    """Index of the nearest beam elevation (beams descending); ties go to the lower index."""
    beams = np.asarray(beams, dtype=np.float64)
    asc = beams[::-1]
    pos = np.searchsorted(asc, elev)
    lo = np.clip(pos - 1, 0, len(asc) - 1)
    hi = np.clip(pos, 0, len(asc) - 1)
    pick_hi = np.abs(asc[hi] - elev) <= np.abs(elev - asc[lo])
    asc_idx = np.where(pick_hi, hi, lo)
    return len(beams) - 1 - asc_idx


def project(cloud: PointCloud, sensor: SensorSpec, width: int | None = None):
    """Spherical projection -> (RangeImage, PixelIndexMap); normals left at zero."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot project an empty cloud")
    width = sensor.horizontal_resolution if width is None else int(width)
    if width < 1:
        raise ShapeError("width must be >= 1")
    height = sensor.beams
    row, col, r, in_fov = pixel_coords(cloud.xyz, sensor, width)
    rows = np.where(in_fov, row, -1)
    cols = np.where(in_fov, col, -1)
    pmap = PixelIndexMap.build(rows, cols, r, height, width)
    return render(cloud, pmap), pmap


def render(cloud: PointCloud, pmap: PixelIndexMap) -> RangeImage:
    """Fill range/remission/xyz from each pixel's representative point."""
    rep = pmap.representatives()
    valid = rep >= 0
    data = np.zeros((pmap.height, pmap.width, 5))
    data[..., 0] = INVALID_RANGE
    xyz = np.zeros((pmap.height, pmap.width, 3))
    pts = cloud.points[rep[valid]]
    data[valid, 0] = np.linalg.norm(pts[:, :3], axis=1)
    data[valid, 1] = pts[:, 3]
    xyz[valid] = pts[:, :3]
    return RangeImage(data, valid, rep, xyz)


def compute_normals(img: RangeImage) -> RangeImage:
    """Central-difference normals on the representative 3D positions.

    Horizontal neighbours wrap around; the normal is flipped to face the
    sensor. Pixels whose 4-neighbour stencil is incomplete get a zero normal.
    """
    out = img.copy()
    p = img.xyz
    v = img.valid
    left, right = np.roll(p, 1, axis=1), np.roll(p, -1, axis=1)
    vl, vr = np.roll(v, 1, axis=1), np.roll(v, -1, axis=1)
    up = np.zeros_like(p)
    down = np.zeros_like(p)
    vu = np.zeros_like(v)
    vd = np.zeros_like(v)
    up[1:], vu[1:] = p[:-1], v[:-1]
    down[:-1], vd[:-1] = p[1:], v[1:]
    n = np.cross(right - left, down - up)
    norm = np.linalg.norm(n, axis=-1)
    ok = v & vl & vr & vu & vd & (norm > 1e-12)
    n = np.where(ok[..., None], n / np.where(norm > 1e-12, norm, 1.0)[..., None], 0.0)
    facing = np.sum(n * p, axis=-1) > 0
    n[facing] *= -1.0
    out.data[..., 2:5] = n
    return out


def channel_stats(images):
    """Per-channel mean/std over the valid pixels of a collection of images."""
    vals = np.concatenate([img.data[img.valid] for img in images], axis=0)
    if vals.shape[0] == 0:
        raise DegenerateStats("no valid pixels")
    return vals.mean(axis=0), vals.std(axis=0)


def normalize_channels(img: RangeImage, stats) -> RangeImage:
    mean, std = (np.asarray(s, dtype=np.float64) for s in stats)
    if mean.shape != (img.data.shape[2],) or std.shape != mean.shape:
        raise ShapeError("stats must have one mean/std per channel")
    if np.any(std <= 0):
        raise DegenerateStats("channel std must be positive")
    out = img.copy()
    out.data[img.valid] = (img.data[img.valid] - mean) / std
    return out


def cutout(img: RangeImage, pmap: PixelIndexMap, width: int, rng=None, start: int | None = None):
    """Columns [c0, c0 + width) with wraparound; points outside become unprojected."""
    w = img.width
    if width > w or width < 1:
        raise InvalidCutout(f"cutout width {width} not in [1, {w}]")
    if start is None:
        start = int(rng.integers(0, w))
    cols = (start + np.arange(width)) % w
    new_col = (pmap.point_to_pixel[:, 1] - start) % w
    keep = pmap.projected & (new_col < width)
    rows = np.where(keep, pmap.point_to_pixel[:, 0], -1)
    newmap = pmap.remap(rows, np.where(keep, new_col, -1), width)
    return img.take_columns(cols), newmap


@dataclass(frozen=True)
class DropoutSpec:
    max_patches: int = 0
    max_height: int = 4
    max_width: int = 8


def augment2d(img: RangeImage, pmap: PixelIndexMap, rng, p_flip=0.5, dropout: DropoutSpec | None = None):
    """Random horizontal flip and rectangular dropout (dropped pixels become invalid)."""
    out = img.copy()
    newmap = pmap
    if p_flip > 0 and rng.random() < p_flip:
        out = flip_columns(out)
        newmap = flip_map(pmap)
    if dropout is not None and dropout.max_patches > 0:
        n = int(rng.integers(0, dropout.max_patches + 1))
        for _ in range(n):
            ph = int(rng.integers(1, dropout.max_height + 1))
            pw = int(rng.integers(1, dropout.max_width + 1))
            r0 = int(rng.integers(0, max(out.height - ph, 0) + 1))
            c0 = int(rng.integers(0, max(out.width - pw, 0) + 1))
            out.data[r0:r0 + ph, c0:c0 + pw] = 0.0
            out.data[r0:r0 + ph, c0:c0 + pw, 0] = INVALID_RANGE
            out.valid[r0:r0 + ph, c0:c0 + pw] = False
    return out, newmap


def flip_columns(img: RangeImage) -> RangeImage:
    return img.take_columns(np.arange(img.width)[::-1])


def flip_map(pmap: PixelIndexMap) -> PixelIndexMap:
    proj = pmap.projected
    cols = np.where(proj, pmap.width - 1 - pmap.point_to_pixel[:, 1], -1)
    return pmap.remap(pmap.point_to_pixel[:, 0], cols)


def lift_features(feature_map, pmap: PixelIndexMap):
    """Gather each point's pixel feature vector; unprojected points get zeros.

    Accepts an (H, W, F) array or tensor and returns (N, F) of the same kind.
    """
    if feature_map.shape[:2] != (pmap.height, pmap.width):
        raise ShapeError(f"feature map {feature_map.shape[:2]} vs map {(pmap.height, pmap.width)}")
    idx = pmap.flat_index()
    f = feature_map.shape[2]
    if isinstance(feature_map, ad.Tensor):
        return ad.gather_rows(ad.reshape(feature_map, (-1, f)), idx)
    flat = np.asarray(feature_map).reshape(-1, f)
    out = np.zeros((idx.shape[0], f), dtype=flat.dtype)
    ok = idx >= 0
    out[ok] = flat[idx[ok]]
    return out


# ---------------------------------------------------------------- serialisation

_IMG_MAGIC = b"LXRI"


def write_range_image(img: RangeImage) -> bytes:
    """16-byte header (magic, H, W, channels) + float32 channels + uint8 mask + int32 index."""
    h, w, c = img.data.shape
    head = _IMG_MAGIC + struct.pack("<III", h, w, c)
    return b"".join([
        head,
        np.ascontiguousarray(img.data, dtype="<f4").tobytes(),
        np.ascontiguousarray(img.valid, dtype=np.uint8).tobytes(),
        np.ascontiguousarray(img.point_index, dtype="<i4").tobytes(),
    ])


def read_range_image(blob: bytes) -> RangeImage:
    if len(blob) < 16 or blob[:4] != _IMG_MAGIC:
        raise MalformedImage("not a range image file")
    h, w, c = struct.unpack_from("<III", blob, 4)
    n = h * w
    need = 16 + 4 * n * c + n + 4 * n
    if len(blob) != need:
        raise MalformedImage(f"expected {need} bytes, got {len(blob)}")
    off = 16
    data = np.frombuffer(blob, "<f4", n * c, off).reshape(h, w, c).astype(np.float64)
    off += 4 * n * c
    valid = np.frombuffer(blob, np.uint8, n, off).reshape(h, w).astype(bool)
    off += n
    index = np.frombuffer(blob, "<i4", n, off).reshape(h, w).astype(np.int64)
    return RangeImage(data, valid, index, np.zeros((h, w, 3)))
