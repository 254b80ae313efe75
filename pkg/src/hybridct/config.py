"""Run configuration: one YAML/JSON file, missing keys fall back to the defaults below.

Schema (all keys optional except ``data_root``)::

    data_root: path/to/dataset          # <root>/COVID, <root>/non-COVID
    seed: 42                            # split, head init, shuffling, augmentation
    weights: imagenet                   # or "random" (offline smoke runs)
    imagenet_preproc: false             # true = ImageNet mean/std after [0,1] scaling
    backbones: [VGG16, DENSENET121, MOBILENETV2]
    split:
      train_frac: 0.85
      val_frac: 0.10                    # carved out of the training portion
      group_pattern: null               # regex -> patient-level split
      positive_dir: COVID
    augmentation:
      rotation_range: 10
      width_shift_range: 0.05
      height_shift_range: 0.05
      shear_range: 0.1
      zoom_range: 0.1
      brightness_range: [0.9, 1.1]
      fill_mode: reflect
    head: {dense_width: 128, dropout_rate: 0.5}
    train:
      learning_rate: 1.0e-4
      epochs: 20
      batch_size: 8
      early_stop_patience: 5
      lr_reduce_factor: 0.5
      lr_reduce_patience: 3
      lr_min: 1.0e-6
      min_delta: 1.0e-4
    fusion: {variance_target: 0.95, pca_after_stack: false}
    svc: {kernel: rbf, C: 1.0, gamma: auto, poly_degree: 3, coef0: 0.0,
          tolerance: 1.0e-3, max_iterations: 1000000}
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ._io import stable_hash
from .augment import AugmentationConfig
from .backbones import BACKBONES, BackboneId, HeadConfig, TrainConfig
from .errors import ConfigError
from .svc import SVCConfig


@dataclass(frozen=True)
class SplitConfig:
    train_frac: float = 0.85
    val_frac: float = 0.10
    group_pattern: str | None = None
    positive_dir: str = "COVID"


@dataclass(frozen=True)
class FusionConfig:
    variance_target: float = 0.95
    pca_after_stack: bool = False

    def __post_init__(self):
        if not 0.0 < self.variance_target <= 1.0:
            raise ConfigError("variance_target must be in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    data_root: str | None = None
    seed: int = 42
    weights: str = "imagenet"
    imagenet_preproc: bool = False
    backbones: tuple[BackboneId, ...] = BACKBONES
    split: SplitConfig = field(default_factory=SplitConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    svc: SVCConfig = field(default_factory=SVCConfig)

    def __post_init__(self):
        if self.weights not in ("imagenet", "random"):
            raise ConfigError(f"weights must be 'imagenet' or 'random', got {self.weights!r}")
        bbs = tuple(BackboneId(b) for b in self.backbones)
        if set(bbs) != set(BACKBONES) or len(bbs) != len(BACKBONES):
            raise ConfigError("the hybrid model needs exactly VGG16, DENSENET121 and MOBILENETV2")
        object.__setattr__(self, "backbones", BACKBONES)
        if self.train.seed != self.seed:
            object.__setattr__(self, "train", replace(self.train, seed=self.seed))

    def to_dict(self) -> dict:
        return {
            "data_root": self.data_root,
            "seed": self.seed,
            "weights": self.weights,
            "imagenet_preproc": self.imagenet_preproc,
            "backbones": [b.value for b in self.backbones],
            "split": asdict(self.split),
            "augmentation": self.augmentation.to_dict(),
            "head": asdict(self.head),
            "train": asdict(self.train),
            "fusion": asdict(self.fusion),
            "svc": self.svc.to_dict(),
        }

    @property
    def hash(self) -> str:
        return stable_hash(self.to_dict())

    def with_overrides(self, **kw) -> RunConfig:
        return replace(self, **kw)


_SECTIONS = {
    "split": SplitConfig,
    "augmentation": AugmentationConfig,
    "head": HeadConfig,
    "train": TrainConfig,
    "fusion": FusionConfig,
    "svc": SVCConfig,
}


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def config_from_dict(raw: dict | None) -> RunConfig:
    raw = dict(raw or {})
    top = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: v for k, v in raw.items() if k not in _SECTIONS}
    if "backbones" in kwargs:
        kwargs["backbones"] = tuple(kwargs["backbones"])
    if kwargs.get("data_root") is not None:
        kwargs["data_root"] = str(kwargs["data_root"])
    for name, cls in _SECTIONS.items():
        kwargs[name] = _section(cls, raw.get(name), name)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw)


def dump_config(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")
