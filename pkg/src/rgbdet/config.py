"""Typed configuration sections and strict YAML loading.

Every tunable in the package lives in one of the dataclasses below, grouped
by the subsystem it controls.  ``RunConfig`` bundles all sections; YAML
files and CLI overrides are merged into it via :func:`load_config`.

Strictness rules:

* unknown keys (at any nesting level) raise :class:`ConfigError` naming the
  offending key — typos never silently no-op;
* every field has a sensible default, so an empty file / no file is valid;
* overrides win over file values, file values win over defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, get_args, get_origin, get_type_hints

import yaml


class ConfigError(ValueError):
    """Raised for malformed config files, unknown keys, or bad values."""


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    """Temporal pair sampling over frame sequences."""

    delta_t: int = 50  # max |frame offset| between the two views of a pair


@dataclass(frozen=True)
class TransformSpec:
    """Probabilities and parameter ranges for the stochastic augmentations.

    Crop windows are sampled in coordinates normalized to [0, 1] so a
    ``Transform`` instance is independent of source image size.
    """

    out_size: tuple[int, int] = (64, 64)  # (height, width) fed to the network
    crop_scale: tuple[float, float] = (0.4, 1.0)  # area fraction of the source
    crop_ratio: tuple[float, float] = (0.75, 4.0 / 3.0)  # aspect multiplier range
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4  # factor ~ U[1-b, 1+b]
    contrast: float = 0.4  # factor ~ U[1-c, 1+c]
    saturation: float = 0.4  # factor ~ U[1-s, 1+s]
    hue: float = 0.1  # shift ~ U[-h, +h], as a fraction of the full hue circle
    grayscale_prob: float = 0.2
    blur_prob: float = 0.5
    blur_sigma: tuple[float, float] = (0.1, 2.0)


@dataclass(frozen=True)
class BlockConfig:
    """Encoder topology: stage widths, representation size, input size."""

    widths: tuple[int, int, int, int, int] = (8, 16, 32, 64, 128)  # C1..C5
    rep_dim: int = 64  # output dimension of each projection head
    input_size: tuple[int, int] = (64, 64)  # (height, width)


@dataclass(frozen=True)
class LossConfig:
    """Contrastive loss temperature and term weights."""

    tau: float = 0.2
    lambda_rgbd: float = 1.0
    lambda_rgb_d: float = 1.0  # weight of the RGB-queries / depth-keys term
    lambda_d_rgb: float = 1.0  # weight of the depth-queries / RGB-keys term


@dataclass(frozen=True)
class DetectorConfig:
    """Detection head geometry, thresholds, and loss term weights."""

    num_classes: int = 1
    strides: tuple[int, int] = (8, 16)
    # anchors[s][a] = (width, height) in pixels for scale s
    anchors: tuple[tuple[tuple[int, int], ...], ...] = (
        ((10, 20), (16, 32), (24, 48)),
        ((32, 64), (48, 96), (64, 128)),
    )
    spp_pool_sizes: tuple[int, int, int] = (3, 5, 7)
    conf_threshold: float = 0.25  # detections require score strictly above this
    nms_iou: float = 0.5  # suppress boxes with IoU strictly above this
    obj_bias_init: float = -4.0  # initial objectness logit bias
    ignore_iou: float = 0.5  # unassigned preds above this IoU with any GT are ignored
    loss_box_weight: float = 1.0
    loss_obj_weight: float = 1.0
    loss_cls_weight: float = 1.0


@dataclass(frozen=True)
class PretrainConfig:
    """Contrastive pretraining loop parameters."""

    epochs: int = 100
    batch_size: int = 16
    optimizer: str = "sgd"  # sgd | adam
    lr: float = 0.05
    sgd_momentum: float = 0.9
    weight_decay: float = 0.0
    ema_momentum: float = 0.99  # key-encoder momentum coefficient m
    pairing_mode: str = "combined"  # augment_only | temporal_only | combined
    batch_sampling: str = "iid"  # iid | distinct_seq (spread each batch over sequences)
    fuse_at: str = "C3"  # C3 | C4 | C5
    crossmodal_enabled: bool = True
    seed: int = 0
    steps_per_epoch: int = 0  # 0 = one pass over all frames per epoch
    lr_schedule: str = "cosine"  # cosine | constant
    log_every: int = 1  # log-CSV row cadence in steps


@dataclass(frozen=True)
class FinetuneConfig:
    """Detector training loop parameters."""

    epochs: int = 26
    batch_size: int = 8
    lr: float = 0.01
    sgd_momentum: float = 0.9
    weight_decay: float = 0.0
    init_mode: str = "timclr"  # timclr (load pretrained backbone) | random
    seed: int = 0
    steps_per_epoch: int = 0  # 0 = one pass over the training frames per epoch
    lr_schedule: str = "cosine"  # cosine | constant
    log_every: int = 1
    eval_every: int = 0  # 0 = never; else evaluate train AP50 every N steps
    early_stop_ap50: float = 0.0  # 0 = disabled; stop once train AP50 >= value


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic RGB-D sequence generator parameters."""

    num_sequences: int = 4
    frames_per_sequence: int = 100
    image_size: tuple[int, int] = (64, 64)  # (height, width)
    num_actors: int = 2
    occluder_density: float = 0.5  # expected occluders per sequence (0 = none)
    lighting_amplitude: float = 0.3  # sinusoidal brightness ramp amplitude
    seed: int = 0
    background_depth_mm: tuple[int, int] = (4000, 9000)  # per-sequence plane depth range
    actor_depth_mm: tuple[int, int] = (1500, 3500)
    occluder_depth_mm: tuple[int, int] = (700, 1200)


@dataclass(frozen=True)
class RunConfig:
    """All sections bundled; the unit that is snapshotted next to outputs."""

    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    transform: TransformSpec = field(default_factory=TransformSpec)
    blocks: BlockConfig = field(default_factory=BlockConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


_VALID_PAIRING_MODES = ("augment_only", "temporal_only", "combined")
_VALID_FUSE_AT = ("C3", "C4", "C5")
_VALID_INIT_MODES = ("timclr", "random")
_VALID_SCHEDULES = ("cosine", "constant")
_VALID_OPTIMIZERS = ("sgd", "adam")
_VALID_BATCH_SAMPLING = ("iid", "distinct_seq")


# ---------------------------------------------------------------------------
# Dict <-> dataclass conversion (strict)
# ---------------------------------------------------------------------------


def _coerce(value: Any, typ: Any, path: str) -> Any:
    """Convert a parsed-YAML value to the annotated field type, strictly."""
    origin = get_origin(typ)
    if is_dataclass(typ):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return _from_dict(typ, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a sequence, got {type(value).__name__}")
        args = get_args(typ)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, t, f"{path}[{i}]") for i, (v, t) in enumerate(zip(value, args)))
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {typ!r}")


def _from_dict(cls: type, data: dict, path: str) -> Any:
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {path + '.' if path else ''}{name!r}")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], f"{path + '.' if path else ''}{f.name}")
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    """Build a :class:`RunConfig` from a nested dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    cfg = _from_dict(RunConfig, data, "")
    validate_config(cfg)
    return cfg


def config_to_dict(cfg: Any) -> dict:
    """Dataclass -> plain nested dict (tuples become lists)."""
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def validate_config(cfg: RunConfig) -> None:
    """Range/enum checks beyond type coercion."""

    def require(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(msg)

    require(cfg.sampler.delta_t >= 1, "sampler.delta_t must be >= 1")
    t = cfg.transform
    require(0.0 < t.crop_scale[0] <= t.crop_scale[1] <= 1.0, "transform.crop_scale must satisfy 0 < lo <= hi <= 1")
    require(0.0 < t.crop_ratio[0] <= t.crop_ratio[1], "transform.crop_ratio must be positive and ordered")
    for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob"):
        require(0.0 <= getattr(t, name) <= 1.0, f"transform.{name} must be in [0, 1]")
    require(0.0 < t.blur_sigma[0] <= t.blur_sigma[1], "transform.blur_sigma must be positive and ordered")
    require(t.out_size[0] >= 1 and t.out_size[1] >= 1, "transform.out_size must be positive")
    b = cfg.blocks
    require(len(b.widths) == 5 and all(w >= 1 for w in b.widths), "blocks.widths needs five positive entries")
    require(b.rep_dim >= 1, "blocks.rep_dim must be positive")
    require(b.input_size[0] % 32 == 0 and b.input_size[1] % 32 == 0, "blocks.input_size must be divisible by 32")
    require(cfg.loss.tau > 0.0, "loss.tau must be positive")
    for name in ("lambda_rgbd", "lambda_rgb_d", "lambda_d_rgb"):
        require(getattr(cfg.loss, name) >= 0.0, f"loss.{name} must be non-negative")
    d = cfg.detector
    require(d.num_classes >= 1, "detector.num_classes must be >= 1")
    require(len(d.strides) == len(d.anchors), "detector.anchors must give one anchor tuple per stride")
    require(all(s >= 1 for s in d.strides), "detector.strides must be positive")
    require(all(len(per) >= 1 for per in d.anchors), "detector.anchors needs at least one anchor per scale")
    require(all(w > 0 and h > 0 for per in d.anchors for (w, h) in per), "detector anchor sizes must be positive")
    require(all(k % 2 == 1 for k in d.spp_pool_sizes), "detector.spp_pool_sizes must be odd (same-padding pools)")
    require(0.0 <= d.conf_threshold < 1.0, "detector.conf_threshold must be in [0, 1)")
    require(0.0 < d.nms_iou < 1.0, "detector.nms_iou must be in (0, 1)")
    p = cfg.pretrain
    require(p.pairing_mode in _VALID_PAIRING_MODES, f"pretrain.pairing_mode must be one of {_VALID_PAIRING_MODES}")
    require(p.fuse_at in _VALID_FUSE_AT, f"pretrain.fuse_at must be one of {_VALID_FUSE_AT}")
    require(0.0 <= p.ema_momentum <= 1.0, "pretrain.ema_momentum must be in [0, 1]")
    require(p.lr > 0.0 and p.epochs >= 1 and p.batch_size >= 1, "pretrain lr/epochs/batch_size must be positive")
    require(p.lr_schedule in _VALID_SCHEDULES, f"pretrain.lr_schedule must be one of {_VALID_SCHEDULES}")
    require(p.optimizer in _VALID_OPTIMIZERS, f"pretrain.optimizer must be one of {_VALID_OPTIMIZERS}")
    require(
        p.batch_sampling in _VALID_BATCH_SAMPLING,
        f"pretrain.batch_sampling must be one of {_VALID_BATCH_SAMPLING}",
    )
    f = cfg.finetune
    require(f.init_mode in _VALID_INIT_MODES, f"finetune.init_mode must be one of {_VALID_INIT_MODES}")
    require(f.lr > 0.0 and f.epochs >= 1 and f.batch_size >= 1, "finetune lr/epochs/batch_size must be positive")
    require(f.lr_schedule in _VALID_SCHEDULES, f"finetune.lr_schedule must be one of {_VALID_SCHEDULES}")
    require(0.0 <= f.early_stop_ap50 <= 1.0, "finetune.early_stop_ap50 must be in [0, 1]")
    s = cfg.synth
    require(s.num_sequences >= 1 and s.frames_per_sequence >= 1, "synth sequence counts must be positive")
    require(s.image_size[0] >= 16 and s.image_size[1] >= 16, "synth.image_size must be at least 16x16")
    require(s.num_actors >= 0, "synth.num_actors must be non-negative")
    require(s.occluder_density >= 0.0, "synth.occluder_density must be non-negative")
    require(s.lighting_amplitude >= 0.0, "synth.lighting_amplitude must be non-negative")
    require(0 < s.actor_depth_mm[0] <= s.actor_depth_mm[1], "synth.actor_depth_mm must be positive and ordered")
    require(
        0 < s.background_depth_mm[0] <= s.background_depth_mm[1],
        "synth.background_depth_mm must be positive and ordered",
    )
    require(
        s.actor_depth_mm[1] < s.background_depth_mm[0],
        "synth actors must be nearer than the background",
    )
    require(
        0 < s.occluder_depth_mm[0] <= s.occluder_depth_mm[1] < s.actor_depth_mm[0],
        "synth occluders must be nearer than actors",
    )


# ---------------------------------------------------------------------------
# YAML load / merge / snapshot
# ---------------------------------------------------------------------------


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else str(key)
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value, here)
        else:
            out[key] = value
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Load a YAML config file and apply nested overrides (overrides win)."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file is not valid YAML: {path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file must contain a mapping: {path}")
        data = loaded
    if overrides:
        data = _deep_merge(data, overrides)
    return config_from_dict(data)


def save_config_snapshot(cfg: Any, path: str) -> None:
    """Write the fully-resolved config as YAML (stable key order)."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True)


def config_sha256(cfg: Any) -> str:
    """Stable content hash of a config (canonical JSON of its dict form)."""
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
