"""Dataclass configs and the flat ``section.key=value`` config file format.

Precedence is CLI overrides > file values > dataclass defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError


@dataclass
class EnhancementLossConfig:
    spa_region: int = 4
    exp_region: int = 16
    exposure_target: float = 0.6
    exp_squared: bool = False
    w_spa: float = 1.0
    w_exp: float = 1.0
    w_tva: float = 1.0
    w_col: float = 1.0

    def __post_init__(self):
        if self.spa_region < 1 or self.exp_region < 1:
            raise ConfigError("region sizes must be >= 1")
        if not 0.0 < self.exposure_target < 1.0:
            raise ConfigError("exposure_target must lie in (0, 1)")
        if min(self.w_spa, self.w_exp, self.w_tva, self.w_col) < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class DistillationConfig:
    lambda1: float = 0.1
    lambda2: float = 0.1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")


@dataclass
class ModelConfig:
    """Architecture sizes. ``input_size`` is the (H, W) fed to the networks."""

    input_size: tuple[int, int] = (256, 128)
    n_iter: int = 8
    enhancer_width: int = 32
    enhancer_init_std: float = 0.02
    zero_init_enhancer_head: bool = False
    backbone_widths: tuple[int, ...] = (16, 32, 64, 128)
    feature_dim: int = 128
    fusion_hidden: int | None = None  # defaults to 2D
    bottleneck_dim: int | None = None  # defaults to D
    idm_cls_hidden: int | None = None  # defaults to D
    dropout: float = 0.5

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.backbone_widths = tuple(int(v) for v in self.backbone_widths)
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise ConfigError(f"bad input_size {self.input_size}")
        if self.n_iter < 1 or self.feature_dim < 1 or self.enhancer_width < 1:
            raise ConfigError("n_iter, feature_dim and enhancer_width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def fusion_hidden_dim(self) -> int:
        return self.fusion_hidden or 2 * self.feature_dim

    @property
    def bottleneck(self) -> int:
        return self.bottleneck_dim or self.feature_dim

    @property
    def idm_hidden(self) -> int:
        return self.idm_cls_hidden or self.feature_dim


VARIANTS = ("full", "mb", "mb+ieb")


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    epochs: int = 120
    seed: int = 0
    variant: str = "full"
    metric: str = "cosine"

    def __post_init__(self):
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate, momentum and weight_decay must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.metric not in ("cosine", "euclidean"):
            raise ConfigError(f"unknown metric {self.metric!r}")


@dataclass
class DataConfig:
    dataset: str | None = None
    n_train_identities: int | None = None  # None: half of the identities
    probes_per_view: int = 3
    split_seed: int = 0


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: EnhancementLossConfig = field(default_factory=EnhancementLossConfig)
    distill: DistillationConfig = field(default_factory=DistillationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out: str = "runs/default"

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        return cls(
            train=TrainConfig(**d.get("train", {})),
            loss=EnhancementLossConfig(**d.get("loss", {})),
            distill=DistillationConfig(**d.get("distill", {})),
            model=ModelConfig(**d.get("model", {})),
            data=DataConfig(**d.get("data", {})),
            out=d.get("out", "runs/default"),
        )


# short aliases accepted in config files and --set flags
ALIASES = {"train.lr": "train.learning_rate", "train.wd": "train.weight_decay"}


def _coerce(raw: str, current: Any, typ: Any):
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    if isinstance(current, bool) or typ in (bool, "bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(current, tuple) or "tuple" in str(typ):
        return tuple(int(p) for p in raw.replace("x", ",").split(",") if p.strip())
    if isinstance(current, int) or str(typ).startswith("int"):
        return int(raw)
    if isinstance(current, float) or str(typ).startswith("float"):
        return float(raw)
    return raw


def apply_overrides(cfg: RunConfig, values: Mapping[str, str]) -> RunConfig:
    """Return a new config with dotted ``section.key`` string values applied."""
    d = cfg.to_dict()
    for key, raw in values.items():
        key = ALIASES.get(key, key)
        if key == "out":
            d["out"] = raw
            continue
        section, _, name = key.partition(".")
        if section not in d or not isinstance(d[section], dict) or name not in d[section]:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = next(
            f.type for f in dataclasses.fields(getattr(cfg, section)) if f.name == name
        )
        try:
            d[section][name] = _coerce(str(raw), d[section][name], ftype)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    return RunConfig.from_dict(d)


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg = apply_overrides(cfg, parse_kv_text(p.read_text()))
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        if not isinstance(values, dict):
            lines.append(f"{section}={values}")
            continue
        for k, v in values.items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            lines.append(f"{section}.{k}={v}")
    return "\n".join(lines) + "\n"
