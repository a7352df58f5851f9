"""Synthetic datasets and per-sample preprocessing for the three streams.

Every sample is a target-sensor range image (optionally a cutout) plus the
voxel representatives of the points that landed inside it, so the 2D and 3D
streams always describe the same points.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .errors import MalformedScan
from .lidar_io import (LabelArray, PointCloud, builtin_mapping, parse_labels, parse_scan, write_labels,
                       write_scan)
from .projection import (DropoutSpec, augment2d, channel_stats, compute_normals, cutout,
                         normalize_channels, project)
from .scene import raw_ids_for, simulate_scan, synth_scene
from .targetlike import align_dims, align_index_map, resample_beams
from .voxel import Aug3DSpec, augment3d, voxelize

SPLITS = {"source": 0, "target": 1, "val": 2, "test": 3}


@dataclass(eq=False)
class Scan:
    cloud: PointCloud
    labels: LabelArray  # mapped class indices
    raw_ids: np.ndarray  # dataset-specific semantic ids


def split_seed(seed, split, index):
    return int(np.random.SeedSequence([seed, SPLITS[split], index]).generate_state(1)[0])


def split_domain(split):
    return "source" if split == "source" else "target"


def synth_scan(cfg: ScenarioConfig, split: str, index: int) -> Scan:
    domain = split_domain(split)
    sensor = (cfg.source if domain == "source" else cfg.target).spec()
    params = (cfg.source_scene if domain == "source" else cfg.target_scene).scene_params()
    mapping = builtin_mapping(cfg.source_mapping if domain == "source" else cfg.target_mapping)
    s = split_seed(cfg.seed, split, index)
    scene = synth_scene(s, params)
    cloud, scene_ids = simulate_scan(scene, sensor, s + 1, frame_id=index)
    raw = raw_ids_for(mapping, scene_ids.labels)
    return Scan(cloud, mapping.map_ids(raw), raw)


def synth_split(cfg: ScenarioConfig, split: str, count: int | None = None):
    if count is None:
        count = {"source": cfg.data.source_scans, "target": cfg.data.target_scans,
                 "val": cfg.data.val_scans, "test": cfg.data.test_scans}[split]
    return [synth_scan(cfg, split, i) for i in range(count)]


def split_mapping(cfg: ScenarioConfig, split: str):
    return builtin_mapping(cfg.source_mapping if split_domain(split) == "source" else cfg.target_mapping)


def write_split(directory, scans):
    """``NNNNNN.bin`` / ``NNNNNN.label`` pairs; returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, s in enumerate(scans):
        for suffix, blob in ((".bin", write_scan(s.cloud)), (".label", write_labels(s.raw_ids))):
            p = d / f"{i:06d}{suffix}"
            p.write_bytes(blob)
            paths.append(p)
    return paths


def read_scan_pair(scan_path, mapping, frame_id=0) -> Scan:
    scan_path = Path(scan_path)
    cloud = parse_scan(scan_path.read_bytes(), frame_id)
    blob = scan_path.with_suffix(".label").read_bytes()
    labels = parse_labels(blob, mapping, len(cloud))
    raw = np.frombuffer(blob, dtype="<u4") & 0xFFFF
    return Scan(cloud, labels, raw.astype(np.int64))


def read_split(directory, mapping):
    files = sorted(Path(directory).glob("*.bin"))
    if not files:
        raise MalformedScan(f"no .bin scans in {directory}")
    return [read_scan_pair(f, mapping, i) for i, f in enumerate(files)]


# ---------------------------------------------------------------- samples


@dataclass(eq=False)
class Sample:
    image: np.ndarray  # (H, W, 5) normalised channels
    label_image: np.ndarray  # (H, W) class or IGNORE
    points: np.ndarray  # (V, 4) voxel representatives
    neighbors: np.ndarray  # (V, 6)
    labels: np.ndarray  # (V,) representative labels
    pixel: np.ndarray  # (V,) flat pixel index of each representative
    # evaluation only: every scored point, its voxel and pixel
    point_labels: np.ndarray | None = None
    point_voxel: np.ndarray | None = None
    point_pixel: np.ndarray | None = None


class Preprocessor:
    """Turns scans into samples for one scenario (sensors, stats, augmentation)."""

    def __init__(self, cfg: ScenarioConfig, train_stats, target_stats):
        self.cfg = cfg
        self.source = cfg.source.spec()
        self.target = cfg.target.spec()
        self.train_stats = train_stats
        self.target_stats = target_stats
        t = cfg.train
        self.aug3d = Aug3DSpec(np.radians(t.rotation_deg), t.translation, t.p_flip_xy, t.p_flip_xy)
        self.dropout = DropoutSpec(t.dropout_patches, max(1, self.target.beams // 8), max(1, t.cutout_width // 8))

    def image(self, cloud, labels, kind):
        """Projected, normal-filled image and map for a stream kind."""
        tgt = self.target
        if kind == "targetlike":
            tl = resample_beams(cloud, labels, self.source, tgt)
            cloud, labels = tl.cloud, tl.labels
            img, pmap = project(cloud, tgt, self.source.horizontal_resolution)
            img = align_dims(compute_normals(img), tgt.beams, tgt.horizontal_resolution)
            pmap = align_index_map(pmap, tgt.horizontal_resolution)
            stats = self.target_stats
        else:
            img, pmap = project(cloud, tgt, tgt.horizontal_resolution)
            img = compute_normals(img)
            stats = self.train_stats
        return normalize_channels(img, stats), pmap, cloud, labels

    def train_sample(self, scan: Scan, kind: str, rng) -> Sample:
        cloud = augment3d(scan.cloud, rng, self.aug3d)
        img, pmap, cloud, labels = self.image(cloud, scan.labels, kind)
        t = self.cfg.train
        img, pmap = cutout(img, pmap, t.cutout_width, rng)
        img, pmap = augment2d(img, pmap, rng, t.p_flip, self.dropout)
        return self._sample(img, pmap, cloud, labels, with_points=False)

    def eval_sample(self, scan: Scan) -> Sample:
        img, pmap, cloud, labels = self.image(scan.cloud, scan.labels, "target")
        return self._sample(img, pmap, cloud, labels, with_points=True)

    def _sample(self, img, pmap, cloud, labels, with_points):
        idx = np.nonzero(pmap.projected)[0]
        vs = voxelize(cloud.subset(idx), self.cfg.train.voxel_size)
        reps = idx[vs.representative]
        flat = pmap.flat_index()
        s = Sample(img.data, img.label_image(labels), cloud.points[reps], vs.neighbors(),
                   labels.labels[reps], flat[reps])
        if with_points:
            s.point_labels = labels.labels[idx]
            s.point_voxel = vs.point_to_voxel
            s.point_pixel = flat[idx]
        return s


def domain_stats_images(cfg: ScenarioConfig, scans):
    """Per-channel statistics of target-sensor images of ``scans``."""
    tgt = cfg.target.spec()
    imgs = [compute_normals(project(s.cloud, tgt)[0]) for s in scans]
    return channel_stats(imgs)


# ---------------------------------------------------------------- batches


@dataclass(eq=False)
class Batch:
    images: np.ndarray  # (B, H, W, 5)
    label_images: np.ndarray  # (B, H, W)
    points: np.ndarray  # (P, 4) all representatives
    neighbors: np.ndarray  # (P, 6) batch-global indices
    labels: np.ndarray  # (P,)
    pixel: np.ndarray  # (P,) index into the flattened (B*H*W) pixel grid
    segment: np.ndarray  # (P,) sample index
    size: int


def collate(samples) -> Batch:
    h, w = samples[0].image.shape[:2]
    offs = np.cumsum([0] + [len(s.points) for s in samples])
    nb = []
    for s, o in zip(samples, offs):
        nb.append(np.where(s.neighbors >= 0, s.neighbors + o, -1))
    return Batch(
        np.stack([s.image for s in samples]),
        np.stack([s.label_image for s in samples]),
        np.concatenate([s.points for s in samples]),
        np.concatenate(nb),
        np.concatenate([s.labels for s in samples]),
        np.concatenate([s.pixel + b * h * w for b, s in enumerate(samples)]),
        np.concatenate([np.full(len(s.points), b, dtype=np.int64) for b, s in enumerate(samples)]),
        len(samples),
    )


def join(batches) -> tuple[Batch, list]:
    """Concatenate several batches (one forward pass); returns the joint batch and per-batch slices."""
    imgs, pts = 0, 0
    parts, pixel_off, pts_off, sample_off = [], [], [], []
    npix = batches[0].images.shape[1] * batches[0].images.shape[2]
    for b in batches:
        pixel_off.append(imgs * npix)
        pts_off.append(pts)
        sample_off.append(imgs)
        parts.append(((imgs, imgs + b.size), (pts, pts + len(b.points))))
        imgs += b.size
        pts += len(b.points)
    joint = Batch(
        np.concatenate([b.images for b in batches]),
        np.concatenate([b.label_images for b in batches]),
        np.concatenate([b.points for b in batches]),
        np.concatenate([np.where(b.neighbors >= 0, b.neighbors + o, -1) for b, o in zip(batches, pts_off)]),
        np.concatenate([b.labels for b in batches]),
        np.concatenate([b.pixel + o for b, o in zip(batches, pixel_off)]),
        np.concatenate([b.segment + o for b, o in zip(batches, sample_off)]),
        imgs,
    )
    return joint, parts
