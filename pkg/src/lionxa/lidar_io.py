"""Scan/label records, class mappings and sensor descriptions.

Scans are raw little-endian float32 (x, y, z, remission) quadruples and
label files raw little-endian uint32 whose low 16 bits carry the semantic
id (the SemanticKITTI convention).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import DuplicateMapping, InvalidMapping, LabelCountMismatch, MalformedScan

IGNORE = -1
RAW_ID_SPACE = 1 << 16


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray  # (N, 4) float64: x, y, z [m], remission
    frame_id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise MalformedScan(f"points must be (N,4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise MalformedScan("non-finite coordinate or remission")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        return (isinstance(other, PointCloud) and self.frame_id == other.frame_id
                and np.array_equal(self.points, other.points))

    @property
    def xyz(self):
        return self.points[:, :3]

    @property
    def remission(self):
        return self.points[:, 3]

    def subset(self, index):
        return PointCloud(self.points[index], self.frame_id)

    def with_xyz(self, xyz):
        return PointCloud(np.column_stack([xyz, self.points[:, 3]]), self.frame_id)


@dataclass(eq=False)
class LabelArray:
    labels: np.ndarray  # int64 class index or IGNORE
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        bad = (lab != IGNORE) & ((lab < 0) | (lab >= self.num_classes))
        if np.any(bad):
            raise InvalidMapping(f"label values outside [0, {self.num_classes}) and not IGNORE")
        self.labels = lab

    def __len__(self):
        return self.labels.shape[0]

    def __eq__(self, other):
        return (isinstance(other, LabelArray) and self.num_classes == other.num_classes
                and np.array_equal(self.labels, other.labels))

    def subset(self, index):
        return LabelArray(self.labels[index], self.num_classes)

    def histogram(self):
        valid = self.labels[self.labels != IGNORE]
        return np.bincount(valid, minlength=self.num_classes)


@dataclass(frozen=True)
class SensorSpec:
    beam_elevations: tuple  # radians, strictly descending
    horizontal_resolution: int
    fov_up: float
    fov_down: float
    max_range: float
    mount_height: float = 0.0  # sensor origin above the scene ground [m]
    remission_scale: float = 1.0  # sensor-specific intensity calibration

    def __post_init__(self):
        elev = tuple(float(e) for e in self.beam_elevations)
        object.__setattr__(self, "beam_elevations", elev)
        if len(elev) < 1:
            raise ValueError("sensor needs at least one beam")
        if any(b >= a for a, b in zip(elev, elev[1:])):
            raise ValueError("beam elevations must be strictly descending")
        if self.horizontal_resolution < 1 or self.max_range <= 0:
            raise ValueError("invalid horizontal resolution or max range")
        if not self.fov_down < self.fov_up:
            raise ValueError("fov_down must be below fov_up")

    @classmethod
    def uniform(cls, beams, top_deg, bottom_deg, horizontal_resolution, max_range=80.0,
                mount_height=0.0, remission_scale=1.0):
        elev = np.radians(np.linspace(top_deg, bottom_deg, beams))
        half = 0.5 * abs(elev[0] - elev[-1]) / max(beams - 1, 1)
        return cls(tuple(elev), horizontal_resolution, float(elev[0] + half), float(elev[-1] - half),
                   max_range, mount_height, remission_scale)

    @property
    def beams(self):
        return len(self.beam_elevations)

    @property
    def elevations(self):
        return np.asarray(self.beam_elevations)


# ---------------------------------------------------------------- records


def parse_scan(data: bytes, frame_id: int = 0) -> PointCloud:
    if len(data) % 16:
        raise MalformedScan(f"scan length {len(data)} is not a multiple of 16")
    arr = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(arr)):
        raise MalformedScan("scan contains non-finite values")
    return PointCloud(arr.astype(np.float64), frame_id)


def write_scan(cloud: PointCloud) -> bytes:
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


def parse_labels(data: bytes, mapping: "ClassMapping", n: int) -> LabelArray:
    if len(data) != 4 * n:
        raise LabelCountMismatch(f"expected {4 * n} bytes for {n} labels, got {len(data)}")
    raw = np.frombuffer(data, dtype="<u4") & 0xFFFF
    return mapping.map_ids(raw)


def write_labels(raw_ids) -> bytes:
    """Raw semantic ids (instance bits zero) as a label record."""
    return np.asarray(raw_ids, dtype="<u4").tobytes()


# ---------------------------------------------------------------- class mappings


@dataclass(frozen=True, eq=False)
class ClassMapping:
    name: str
    class_names: tuple
    entries: dict = field(default_factory=dict)  # raw name -> class index | IGNORE
    raw_ids: dict = field(default_factory=dict)  # raw name -> semantic id

    @property
    def num_classes(self):
        return len(self.class_names)

    def index(self, class_name):
        return self.class_names.index(class_name)

    def target_of(self, raw_name):
        """Mapped class name for a raw class name, 'ignore' for IGNORE."""
        idx = self.entries[raw_name]
        return "ignore" if idx == IGNORE else self.class_names[idx]

    def lookup_table(self):
        table = np.full(RAW_ID_SPACE, IGNORE, dtype=np.int64)
        for raw_name, rid in self.raw_ids.items():
            if raw_name in self.entries:
                table[rid] = self.entries[raw_name]
        return table

    def map_ids(self, raw) -> LabelArray:
        raw = np.asarray(raw, dtype=np.int64) & 0xFFFF
        return LabelArray(self.lookup_table()[raw], self.num_classes)

    def raw_id(self, raw_name):
        return self.raw_ids[raw_name]


def load_class_mapping(text: str, name: str = "") -> ClassMapping:
    """Parse the mapping config format.

    Lines are ``raw_name = target_name``; ``#`` starts a comment. Sections:
    ``[classes]`` lists target class names in index order, ``[raw_ids]``
    gives ``raw_name = integer`` semantic ids, ``[mapping]`` (or no section)
    holds the mapping lines and ``[meta]`` an optional ``name``.
    """
    section = "mapping"
    classes: list[str] = []
    entries: dict[str, str] = {}
    raw_ids: dict[str, int] = {}
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("classes", "mapping", "raw_ids", "meta"):
                raise InvalidMapping(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "classes":
            if line in classes:
                raise DuplicateMapping(f"line {lineno}: class {line!r} declared twice")
            if line == "ignore":
                raise InvalidMapping("'ignore' is reserved")
            classes.append(line)
            continue
        if "=" not in line:
            raise InvalidMapping(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if section == "meta":
            if key == "name":
                name = name or value
            continue
        if section == "raw_ids":
            if key in raw_ids:
                raise DuplicateMapping(f"line {lineno}: raw id for {key!r} given twice")
            try:
                rid = int(value)
            except ValueError:
                raise InvalidMapping(f"line {lineno}: raw id must be an integer") from None
            if not 0 <= rid < RAW_ID_SPACE:
                raise InvalidMapping(f"line {lineno}: raw id {rid} outside 16-bit range")
            if rid in raw_ids.values():
                raise DuplicateMapping(f"line {lineno}: raw id {rid} used twice")
            raw_ids[key] = rid
            continue
        if key in entries:
            raise DuplicateMapping(f"line {lineno}: {key!r} mapped twice")
        entries[key] = value

    if not classes:
        raise InvalidMapping("missing [classes] block")
    index: dict[str, int] = {}
    for raw_name, target in entries.items():
        if target == "ignore":
            index[raw_name] = IGNORE
        elif target in classes:
            index[raw_name] = classes.index(target)
        else:
            raise InvalidMapping(f"{raw_name!r} maps to undeclared class {target!r}")
    used = {i for i in index.values() if i != IGNORE}
    if used != set(range(len(classes))):
        unused = [classes[i] for i in range(len(classes)) if i not in used]
        raise InvalidMapping(f"target indices not dense; nothing maps to {unused}")
    if raw_ids:
        missing = set(entries) - set(raw_ids)
        if missing:
            raise InvalidMapping(f"no raw id for {sorted(missing)}")
    return ClassMapping(name, tuple(classes), index, raw_ids)


BUILTIN_MAPPINGS = {
    "semantickitti-nuscenes": "semantickitti_nuscenes.cfg",
    "nuscenes-lidarseg": "nuscenes_lidarseg.cfg",
    "semantickitti-poss": "semantickitti_poss.cfg",
    "semanticposs": "semanticposs.cfg",
}


def builtin_mapping_text(name: str) -> str:
    try:
        fname = BUILTIN_MAPPINGS[name]
    except KeyError:
        raise InvalidMapping(f"unknown built-in mapping {name!r}; have {sorted(BUILTIN_MAPPINGS)}") from None
    return resources.files("lionxa.data").joinpath(fname).read_text(encoding="utf-8")


def builtin_mapping(name: str) -> ClassMapping:
    return load_class_mapping(builtin_mapping_text(name), name)
