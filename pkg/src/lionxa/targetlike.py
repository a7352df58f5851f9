"""Source scans re-sampled to look like the target sensor (labels kept)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HeightMismatch, UnsupportedUpsampling
from .lidar_io import LabelArray, PointCloud, SensorSpec
from .projection import PixelIndexMap, RangeImage, nearest_beam, pixel_coords


@dataclass(eq=False)
class TargetLikeScan:
    cloud: PointCloud
    labels: LabelArray
    source_frame: int
    source_index: np.ndarray  # retained point indices into the source scan


def retained_rows(source: SensorSpec, target: SensorSpec):
    """Source rows that are the nearest source elevation to some target beam."""
    return np.unique(nearest_beam(target.elevations, source.elevations))


def resample_beams(cloud: PointCloud, labels: LabelArray, source: SensorSpec, target: SensorSpec) -> TargetLikeScan:
    """Keep only points on source rows matched to a target beam.

    Points outside the source field of view belong to no row and are dropped.
    """
    if target.beams > source.beams:
        raise UnsupportedUpsampling(f"target has {target.beams} beams, source only {source.beams}")
    if len(labels) != len(cloud):
        raise ValueError("labels and cloud differ in length")
    row, _, _, in_fov = pixel_coords(cloud.xyz, source, 1)
    keep_row = np.zeros(source.beams, dtype=bool)
    keep_row[retained_rows(source, target)] = True
    idx = np.nonzero(in_fov & keep_row[row])[0]
    return TargetLikeScan(cloud.subset(idx), labels.subset(idx), cloud.frame_id, idx)


def column_selection(width: int, target_width: int):
    """Nearest source column for each target column."""
    return (np.arange(target_width) * width) // target_width


def align_dims(img: RangeImage, target_h: int, target_w: int) -> RangeImage:
    if img.height != target_h:
        raise HeightMismatch(f"image height {img.height} != target height {target_h}")
    if target_w == img.width:
        return img.copy()
    return img.take_columns(column_selection(img.width, target_w))


def align_index_map(pmap: PixelIndexMap, target_w: int) -> PixelIndexMap:
    """Re-base a pixel map onto the selected columns; points in dropped columns become unprojected."""
    sel = column_selection(pmap.width, target_w)
    inv = np.full(pmap.width, -1, dtype=np.int64)
    inv[sel] = np.arange(target_w)
    cols = np.where(pmap.projected, inv[np.maximum(pmap.point_to_pixel[:, 1], 0)], -1)
    rows = np.where(cols >= 0, pmap.point_to_pixel[:, 0], -1)
    return pmap.remap(rows, cols, target_w)
