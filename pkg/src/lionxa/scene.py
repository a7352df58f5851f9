"""Procedural street scenes and a virtual LiDAR that ray-casts them.

Scene coordinates put the ground at z = 0; the sensor sits at
(0, 0, mount_height) and returned points are expressed in the sensor frame.
Primitive labels are raw SemanticKITTI semantic ids so simulated scans go
through the same class mapping as real label files.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidScene
from .lidar_io import RAW_ID_SPACE, LabelArray, PointCloud, SensorSpec

EPS = 1e-9

# mean remission per raw semantic id; jittered per point
CLASS_REMISSION = {
    10: 0.75,  # car
    40: 0.22,  # road
    48: 0.38,  # sidewalk
    50: 0.30,  # building
    70: 0.52,  # vegetation
    71: 0.18,  # trunk
    72: 0.45,  # terrain
    80: 0.60,  # pole
}
DEFAULT_REMISSION = 0.3
REMISSION_JITTER = 0.05


@dataclass(frozen=True)
class Plane:
    z: float
    label: int

    def intersect(self, origin, dirs):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.z - origin[2]) / dz
        return np.where((np.abs(dz) > EPS) & (t > EPS), t, np.inf)

    def distance(self, pts):
        return np.abs(pts[:, 2] - self.z)


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple
    yaw: float
    label: int

    def _local(self, pts):
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        d = pts - np.asarray(self.center)
        return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]])

    def intersect(self, origin, dirs):
        o = self._local(np.asarray(origin, dtype=np.float64)[None, :])[0]
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        d = np.column_stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]])
        d = np.where(np.abs(d) < EPS, EPS, d)
        half = 0.5 * np.asarray(self.size)
        t1 = (-half - o) / d
        t2 = (half - o) / d
        near = np.minimum(t1, t2).max(axis=1)
        far = np.maximum(t1, t2).min(axis=1)
        hit = (near <= far) & (far > EPS)
        t = np.where(near > EPS, near, far)
        return np.where(hit, t, np.inf)

    def distance(self, pts):
        q = np.abs(self._local(pts)) - 0.5 * np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Cylinder:
    center: tuple  # (x, y)
    radius: float
    z_min: float
    z_max: float
    label: int

    def intersect(self, origin, dirs):
        ox, oy, oz = origin[0] - self.center[0], origin[1] - self.center[1], origin[2]
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a = dx * dx + dy * dy
        b = 2.0 * (dx * ox + dy * oy)
        c = ox * ox + oy * oy - self.radius ** 2
        disc = b * b - 4.0 * a * c
        best = np.full(dirs.shape[0], np.inf)
        ok = (disc >= 0) & (a > EPS)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        safe_a = np.where(a > EPS, a, 1.0)
        for root in ((-b - sq) / (2 * safe_a), (-b + sq) / (2 * safe_a)):
            z = oz + root * dz
            good = ok & (root > EPS) & (z >= self.z_min) & (z <= self.z_max)
            best = np.where(good & (root < best), root, best)
        with np.errstate(divide="ignore", invalid="ignore"):
            for zc in (self.z_min, self.z_max):
                t = (zc - oz) / dz
                px, py = ox + t * dx, oy + t * dy
                good = (np.abs(dz) > EPS) & (t > EPS) & (px * px + py * py <= self.radius ** 2)
                best = np.where(good & (t < best), t, best)
        return best

    def distance(self, pts):
        r = np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1])
        dr = r - self.radius
        zc = 0.5 * (self.z_min + self.z_max)
        dz = np.abs(pts[:, 2] - zc) - 0.5 * (self.z_max - self.z_min)
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Scene:
    primitives: tuple
    seed: int = 0

    def __len__(self):
        return len(self.primitives)


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class BoxKind:
    label: int
    count: tuple  # (min, max) per placement side
    length: tuple  # along the street (x)
    width: tuple  # across the street (y)
    height: tuple
    lateral: tuple  # |y| of the box centre
    along: tuple = (-30.0, 30.0)
    base: float = 0.0
    yaw_jitter: float = 0.0
    both_sides: bool = False


@dataclass(frozen=True)
class CylinderKind:
    label: int
    count: tuple
    radius: tuple
    height: tuple
    lateral: tuple
    along: tuple = (-30.0, 30.0)
    base: float = 0.0
    crown_label: int | None = None
    crown_radius: tuple = (1.0, 1.0)
    crown_height: tuple = (1.0, 1.0)


@dataclass(frozen=True)
class SceneParams:
    ground_label: int | None = 40
    ground_z: float = 0.0
    boxes: tuple = ()
    cylinders: tuple = ()


def _check_range(name, r, positive=True):
    lo, hi = r
    if lo > hi:
        raise InvalidScene(f"{name}: min {lo} > max {hi}")
    if positive and lo <= 0:
        raise InvalidScene(f"{name}: extent must be positive, got {lo}")


def validate_params(params: SceneParams):
    for k in params.boxes:
        _check_range("box count", k.count, positive=False)
        for nm in ("length", "width", "height"):
            _check_range(f"box {nm}", getattr(k, nm))
        _check_range("box lateral", k.lateral, positive=False)
        _check_range("box along", k.along, positive=False)
    for k in params.cylinders:
        _check_range("cylinder count", k.count, positive=False)
        _check_range("cylinder radius", k.radius)
        _check_range("cylinder height", k.height)
        _check_range("cylinder lateral", k.lateral, positive=False)
        if k.crown_label is not None:
            _check_range("crown radius", k.crown_radius)
            _check_range("crown height", k.crown_height)
    if params.ground_label is None and not params.boxes and not params.cylinders:
        raise InvalidScene("scene has no primitives")


def synth_scene(seed: int, params: SceneParams) -> Scene:
    validate_params(params)
    rng = np.random.default_rng(seed)
    prims = []
    if params.ground_label is not None:
        prims.append(Plane(params.ground_z, params.ground_label))

    def sides(both):
        return (-1.0, 1.0) if both else (float(rng.choice([-1.0, 1.0])),)

    for k in params.boxes:
        for side_group in ((-1.0, 1.0) if k.both_sides else (None,)):
            n = int(rng.integers(k.count[0], k.count[1] + 1))
            for _ in range(n):
                side = side_group if side_group is not None else sides(False)[0]
                length, width, height = (rng.uniform(*k.length), rng.uniform(*k.width), rng.uniform(*k.height))
                cx = rng.uniform(*k.along)
                cy = side * rng.uniform(*k.lateral)
                yaw = rng.uniform(-k.yaw_jitter, k.yaw_jitter)
                prims.append(Box((cx, cy, params.ground_z + k.base + height / 2), (length, width, height), yaw, k.label))
    for k in params.cylinders:
        n = int(rng.integers(k.count[0], k.count[1] + 1))
        for _ in range(n):
            side = sides(False)[0]
            radius, height = rng.uniform(*k.radius), rng.uniform(*k.height)
            cx, cy = rng.uniform(*k.along), side * rng.uniform(*k.lateral)
            z0 = params.ground_z + k.base
            prims.append(Cylinder((cx, cy), radius, z0, z0 + height, k.label))
            if k.crown_label is not None:
                cr, ch = rng.uniform(*k.crown_radius), rng.uniform(*k.crown_height)
                prims.append(Cylinder((cx, cy), cr, z0 + height, z0 + height + ch, k.crown_label))
    return Scene(tuple(prims), seed)


@dataclass(frozen=True)
class StreetParams:
    """Scalar knobs for an urban street; expands to SceneParams."""

    road_half_width: float = 4.0
    sidewalk_width: float = 3.0
    sidewalk_height: float = 0.15
    terrain_offset: float = 9.0
    building_offset: float = 15.0
    cars: tuple = (2, 6)
    buildings: tuple = (2, 5)
    trees: tuple = (2, 6)
    poles: tuple = (2, 5)
    terrain_patches: tuple = (1, 3)
    extent: float = 30.0

    def scene_params(self) -> SceneParams:
        e = self.extent
        sw_center = self.road_half_width + self.sidewalk_width / 2
        boxes = (
            BoxKind(48, (1, 1), (2 * e, 2 * e), (self.sidewalk_width, self.sidewalk_width),
                    (self.sidewalk_height, self.sidewalk_height), (sw_center, sw_center), (0.0, 0.0),
                    both_sides=True),
            BoxKind(72, self.terrain_patches, (5.0, 15.0), (2.0, 4.0), (0.04, 0.08),
                    (self.terrain_offset - 1.0, self.terrain_offset + 1.0), (-e, e), both_sides=True),
            BoxKind(50, self.buildings, (6.0, 15.0), (5.0, 10.0), (4.0, 12.0),
                    (self.building_offset, self.building_offset + 5.0), (-e, e), both_sides=True),
            BoxKind(10, self.cars, (3.8, 4.8), (1.7, 2.0), (1.3, 1.7),
                    (max(self.road_half_width - 2.5, 0.0), max(self.road_half_width - 1.2, 0.1)),
                    (-e * 0.8, e * 0.8), base=0.2, yaw_jitter=0.15),
        )
        cylinders = (
            CylinderKind(80, self.poles, (0.08, 0.15), (4.0, 7.0), (sw_center, sw_center + 0.5 * self.sidewalk_width),
                         (-e, e), base=self.sidewalk_height),
            CylinderKind(71, self.trees, (0.15, 0.3), (1.8, 2.8), (self.terrain_offset - 1.5, self.terrain_offset + 2.0),
                         (-e, e), crown_label=70, crown_radius=(1.2, 2.4), crown_height=(2.0, 3.5)),
        )
        return SceneParams(40, 0.0, boxes, cylinders)


# ---------------------------------------------------------------- virtual lidar


def sensor_rays(sensor: SensorSpec):
    """Unit ray directions for every (beam, column), beam-major; column azimuths at pixel centres."""
    elev = sensor.elevations
    w = sensor.horizontal_resolution
    az = (np.arange(w) + 0.5) * (2 * np.pi / w) - np.pi
    e, a = np.meshgrid(elev, az, indexing="ij")
    dirs = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1)
    return dirs.reshape(-1, 3)


def cast(scene: Scene, origin, dirs):
    """Nearest hit distance and primitive index per ray (inf / -1 on miss)."""
    best = np.full(dirs.shape[0], np.inf)
    which = np.full(dirs.shape[0], -1, dtype=np.int64)
    for i, prim in enumerate(scene.primitives):
        t = prim.intersect(origin, dirs)
        closer = t < best
        best = np.where(closer, t, best)
        which = np.where(closer, i, which)
    return best, which


def simulate_scan(scene: Scene, sensor: SensorSpec, seed: int, frame_id: int = 0):
    """Ray-cast one sweep. Returns (PointCloud in the sensor frame, raw-id LabelArray)."""
    if sensor.beams < 2:
        raise ValueError("sensor needs at least 2 beams")
    origin = np.array([0.0, 0.0, sensor.mount_height])
    dirs = sensor_rays(sensor)
    t, which = cast(scene, origin, dirs)
    keep = np.isfinite(t) & (t <= sensor.max_range)
    hits = origin + t[keep, None] * dirs[keep]
    labels = np.array([scene.primitives[i].label for i in which[keep]], dtype=np.int64)
    rng = np.random.default_rng(seed)
    mean = np.array([CLASS_REMISSION.get(int(lab), DEFAULT_REMISSION) for lab in labels])
    rem = np.clip(mean + rng.normal(0.0, REMISSION_JITTER, size=mean.shape), 0.0, 1.0)
    rem = np.clip(rem * sensor.remission_scale, 0.0, 1.0)
    xyz = hits - origin
    cloud = PointCloud(np.column_stack([xyz, rem]), frame_id)
    return cloud, LabelArray(labels, RAW_ID_SPACE)


# ---------------------------------------------------------------- label spaces

# The simulator labels with SemanticKITTI ids; other datasets name the same
# surfaces differently.
SCENE_CLASSES = {40: "road", 48: "sidewalk", 72: "terrain", 50: "building", 10: "car",
                 80: "pole", 71: "trunk", 70: "vegetation"}
RAW_NAME_ALIASES = {
    "nuscenes-lidarseg": {"road": "driveable-surface", "building": "manmade", "pole": "manmade",
                          "trunk": "vegetation"},
    "semanticposs": {"road": "ground", "sidewalk": "ground", "terrain": "ground", "vegetation": "plants"},
}


def raw_ids_for(mapping, scene_ids):
    """Translate simulator ids into ``mapping``'s raw id space."""
    alias = RAW_NAME_ALIASES.get(mapping.name, {})
    table = {sid: mapping.raw_id(alias.get(name, name)) for sid, name in SCENE_CLASSES.items()}
    ids = np.asarray(scene_ids, dtype=np.int64)
    out = np.zeros_like(ids)
    for sid, rid in table.items():
        out[ids == sid] = rid
    return out
