"""Scenario configuration: sensors, label spaces, loss weights, schedules, data.

Text format is INI-style (``configparser``): one section per dataclass,
``key = value`` lines, ``#`` comments. ``[scenario] base = <preset>``
starts from a built-in preset so a file only needs the keys it changes.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .lidar_io import BUILTIN_MAPPINGS, SensorSpec, builtin_mapping
from .losses import LossWeights
from .optim import Schedule
from .scene import StreetParams


@dataclass(frozen=True)
class SensorConfig:
    beams: int = 32
    top_deg: float = 10.0
    bottom_deg: float = -30.0
    width: int = 128  # columns per revolution
    max_range: float = 80.0
    mount_height: float = 1.8
    remission_scale: float = 1.0

    def spec(self) -> SensorSpec:
        return SensorSpec.uniform(self.beams, self.top_deg, self.bottom_deg, self.width, self.max_range,
                                  self.mount_height, self.remission_scale)


@dataclass(frozen=True)
class OptimConfig:
    lr_2d: float = 2.5e-3
    momentum_2d: float = 0.9
    lr_3d: float = 1e-3
    beta1_3d: float = 0.9
    beta2_3d: float = 0.999
    lr_disc: float = 1e-4
    beta1_disc: float = 0.9
    beta2_disc: float = 0.99
    eps: float = 1e-8
    milestones: tuple = (1600, 1800)
    gamma: float = 0.1
    power: float = 0.9


@dataclass(frozen=True)
class TrainConfig:
    max_iter: int = 2000
    batch_size: int = 2
    val_every: int = 200
    cutout_width: int = 64
    voxel_size: float = 0.05
    p_flip: float = 0.5
    dropout_patches: int = 2
    rotation_deg: float = 180.0
    translation: float = 0.2
    p_flip_xy: float = 0.5
    features: int = 16
    stages: tuple = (16, 32, 64)  # 2D encoder widths


@dataclass(frozen=True)
class DataConfig:
    source_scans: int = 24
    target_scans: int = 24
    val_scans: int = 4
    test_scans: int = 8


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    source_mapping: str = "semantickitti-nuscenes"
    target_mapping: str = "semantickitti-nuscenes"
    seed: int = 0
    enable_targetlike: bool = True
    enable_discriminators: bool = True
    oracle: bool = False  # train on labelled target scans instead of adapting
    source: SensorConfig = field(default_factory=SensorConfig)
    target: SensorConfig = field(default_factory=SensorConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    source_scene: StreetParams = field(default_factory=StreetParams)
    target_scene: StreetParams = field(default_factory=StreetParams)

    def __post_init__(self):
        validate(self)

    @property
    def num_classes(self):
        return builtin_mapping(self.source_mapping).num_classes

    @property
    def class_names(self):
        return builtin_mapping(self.source_mapping).class_names

    @property
    def use_targetlike(self):
        return self.enable_targetlike and not self.oracle

    @property
    def use_discriminators(self):
        return self.enable_discriminators and self.weights.adversarial and not self.oracle

    def schedules(self):
        o, t = self.optim, self.train
        return {
            "2d": Schedule("multistep", o.lr_2d, t.max_iter, tuple(o.milestones), o.gamma),
            "3d": Schedule("multistep", o.lr_3d, t.max_iter, tuple(o.milestones), o.gamma),
            "disc": Schedule("poly", o.lr_disc, t.max_iter, power=o.power),
        }


SECTIONS = {  # section name -> attribute holding a nested dataclass
    "source_sensor": "source",
    "target_sensor": "target",
    "weights": "weights",
    "optim": "optim",
    "train": "train",
    "data": "data",
    "source_scene": "source_scene",
    "target_scene": "target_scene",
}
_TOP = ("name", "source_mapping", "target_mapping", "seed", "enable_targetlike", "enable_discriminators", "oracle")


def validate(cfg: ScenarioConfig):
    for m in (cfg.source_mapping, cfg.target_mapping):
        if m not in BUILTIN_MAPPINGS:
            raise ConfigError(f"unknown mapping {m!r}")
    if builtin_mapping(cfg.source_mapping).class_names != builtin_mapping(cfg.target_mapping).class_names:
        raise ConfigError("source and target mappings must share the class list")
    if cfg.target.beams > cfg.source.beams and cfg.enable_targetlike:
        raise ConfigError("target-like data needs a source sensor with at least as many beams")
    t = cfg.train
    if t.max_iter < 1 or t.batch_size < 1 or t.val_every < 1:
        raise ConfigError("max_iter, batch_size and val_every must be positive")
    if not 1 <= t.cutout_width <= cfg.target.width:
        raise ConfigError("cutout_width must lie in [1, target width]")
    if t.voxel_size <= 0:
        raise ConfigError("voxel_size must be positive")
    if len(t.stages) != 3 or min(t.stages) < 1 or t.features < 1:
        raise ConfigError("stages needs three positive widths and features must be positive")
    d = cfg.data
    if min(d.source_scans, d.target_scans, d.val_scans, d.test_scans) < 1:
        raise ConfigError("every split needs at least one scan")
    for s in (cfg.source, cfg.target):
        if s.beams < 2 or s.width < 1 or s.max_range <= 0 or not s.top_deg > s.bottom_deg:
            raise ConfigError(f"invalid sensor {s}")
    o = cfg.optim
    for k in ("lr_2d", "lr_3d", "lr_disc", "eps"):
        if getattr(o, k) <= 0:
            raise ConfigError(f"{k} must be positive")


# ---------------------------------------------------------------- text format


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(text, default, key):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            kind = float if any(isinstance(x, float) for x in default) else int
            return tuple(kind(s) for s in items)
        return text.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None


def _apply(obj, items, section):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    changes = {}
    for key, text in items:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        changes[key] = _parse(text, known[key], f"{section}.{key}")
    try:
        return replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(cp.sections()) - set(SECTIONS) - {"scenario"}
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    top = dict(cp.items("scenario")) if cp.has_section("scenario") else {}
    base_name = top.pop("base", None)
    try:
        base = preset(base_name) if base_name else ScenarioConfig()
    except KeyError:
        raise ConfigError(f"unknown preset {base_name!r}") from None
    nested = {}
    for section, attr in SECTIONS.items():
        obj = getattr(base, attr)
        if cp.has_section(section):
            obj = _apply(obj, cp.items(section), section)
        nested[attr] = obj
    changes = {}
    for key, text in top.items():
        if key not in _TOP:
            raise ConfigError(f"unknown key {key!r} in [scenario]")
        changes[key] = _parse(text, getattr(base, key), key)
    try:
        return replace(base, **changes, **nested)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def render(cfg: ScenarioConfig, comment: str = "") -> str:
    lines = [f"# {ln}" if ln else "#" for ln in comment.splitlines()]
    lines.append("[scenario]")
    lines += [f"{k} = {_fmt(getattr(cfg, k))}" for k in _TOP]
    for section, attr in SECTIONS.items():
        obj = getattr(cfg, attr)
        lines.append("")
        lines.append(f"[{section}]")
        lines += [f"{f.name} = {_fmt(getattr(obj, f.name))}" for f in fields(obj)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- presets

# Desk-scale sensor models: a 64-beam, a 32-beam and a 40-beam spinning lidar.
HDL64 = SensorConfig(64, 2.0, -24.8, 256, 80.0, 1.73)
HDL32 = SensorConfig(32, 10.0, -30.0, 128, 80.0, 1.84)
PANDORA40 = SensorConfig(40, 7.0, -16.0, 128, 80.0, 1.9)

PRESET_WEIGHTS = {
    #                   s    tl    t     p    G2Dtp G3Dtp G2Dtf  D2Dtp D3Dtp D2Dtf D2Dsp D3Dsp D2Dsf
    "nuscenes-usa-sg": (0.8, 0.0, 0.1, 0.5, 0.07, 0.05, 0.02, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1),
    "lidarseg-usa-sg": (0.8, 0.0, 0.1, 0.8, 0.07, 0.05, 0.07, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1),
    "kitti-to-lidarseg": (0.1, 0.02, 0.01, 0.1, 0.07, 0.05, 0.001, 0.2, 0.2, 0.2, 0.1, 0.1, 0.1),
    "kitti-to-poss": (0.8, 1.0, 0.1, 0.8, 0.07, 0.05, 0.001, 0.2, 0.2, 0.05, 0.1, 0.1, 0.05),
}
WEIGHT_ORDER = ("lambda_s", "lambda_tl", "lambda_t", "lambda_p", "g2d_tp", "g3d_tp", "g2d_tf",
                "d2d_tp", "d3d_tp", "d2d_tf", "d2d_sp", "d3d_sp", "d2d_sf")


def _weights(name):
    return LossWeights(**dict(zip(WEIGHT_ORDER, PRESET_WEIGHTS[name])))


# Same sensor, two cities: the target streets are narrower with denser clutter.
_CITY_B = StreetParams(road_half_width=3.2, sidewalk_width=2.2, building_offset=11.0, terrain_offset=7.0,
                       cars=(4, 8), trees=(4, 8), poles=(3, 6))

# Synthetic 64 -> 32 beam scenario used for the end-to-end experiment.
SYNTH_SOURCE = SensorConfig(64, 2.0, -24.8, 128, 60.0, 1.73)
SYNTH_TARGET = SensorConfig(32, 10.0, -30.0, 128, 60.0, 1.84, 0.8)
SYNTH_TRAIN = TrainConfig(cutout_width=32, stages=(12, 24, 48))
# feature-level generator weight as in the 64 -> 32 beam benchmark preset
SYNTH_WEIGHTS = LossWeights(lambda_s=0.8, lambda_tl=0.1, lambda_t=0.1, lambda_p=0.5,
                            g2d_tp=0.07, g3d_tp=0.05, g2d_tf=0.001,
                            d2d_tp=0.2, d3d_tp=0.2, d2d_tf=0.2, d2d_sp=0.1, d3d_sp=0.1, d2d_sf=0.1)

PRESETS = {
    "nuscenes-usa-sg": lambda: ScenarioConfig(
        "nuscenes-usa-sg", "nuscenes-lidarseg", "nuscenes-lidarseg", enable_targetlike=False,
        source=HDL32, target=HDL32, weights=_weights("nuscenes-usa-sg"), target_scene=_CITY_B),
    "lidarseg-usa-sg": lambda: ScenarioConfig(
        "lidarseg-usa-sg", "nuscenes-lidarseg", "nuscenes-lidarseg", enable_targetlike=False,
        source=HDL32, target=HDL32, weights=_weights("lidarseg-usa-sg"), target_scene=_CITY_B),
    "kitti-to-lidarseg": lambda: ScenarioConfig(
        "kitti-to-lidarseg", "semantickitti-nuscenes", "nuscenes-lidarseg",
        source=HDL64, target=HDL32, weights=_weights("kitti-to-lidarseg"), target_scene=_CITY_B),
    "kitti-to-poss": lambda: ScenarioConfig(
        "kitti-to-poss", "semantickitti-poss", "semanticposs",
        source=HDL64, target=PANDORA40, weights=_weights("kitti-to-poss"), target_scene=_CITY_B),
    "synthetic-64-32": lambda: ScenarioConfig(
        "synthetic-64-32", "semantickitti-nuscenes", "semantickitti-nuscenes",
        source=SYNTH_SOURCE, target=SYNTH_TARGET, weights=SYNTH_WEIGHTS, train=SYNTH_TRAIN),
}


def preset(name: str) -> ScenarioConfig:
    return PRESETS[name]()


# ---------------------------------------------------------------- variants


def ablation_variants(cfg: ScenarioConfig):
    """[full, no-discriminator, no-targetlike, no-dis-no-tgl] as (name, config) pairs."""
    no_dis = replace(cfg, enable_discriminators=False, weights=cfg.weights.without_adversarial())
    no_tgl = replace(cfg, enable_targetlike=False, weights=cfg.weights.replace(lambda_tl=0.0))
    both = replace(no_dis, enable_targetlike=False, weights=no_dis.weights.replace(lambda_tl=0.0))
    return [("full", cfg), ("no-discriminator", no_dis), ("no-targetlike", no_tgl), ("no-dis-no-tgl", both)]


def baseline_variant(cfg: ScenarioConfig) -> ScenarioConfig:
    """Source-only training: supervised losses on the source domain alone."""
    w = LossWeights(lambda_p=cfg.weights.lambda_p)
    return replace(cfg, enable_targetlike=False, enable_discriminators=False, weights=w)


def oracle_variant(cfg: ScenarioConfig) -> ScenarioConfig:
    """Supervised training on labelled target scans."""
    w = LossWeights(lambda_p=cfg.weights.lambda_p)
    return replace(cfg, enable_targetlike=False, enable_discriminators=False, oracle=True, weights=w)
