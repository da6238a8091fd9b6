"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .backbone import BACKBONES
from .dataset import DELIMITERS, SPLIT_MODES
from .msvr import MSVR_MODES

ENHANCE_MODES = ("off", "replace")
MS_OBJECTIVES = ("minimize", "maximize")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # data
    ratings: str = ""
    format: str = "double-colon"
    threshold: float = 3.5
    k_core: int = 5
    snapshot: str = ""
    split: str = "leave-one-out"
    max_users: int = 0  # 0 keeps every user; otherwise a seeded uniform subsample after filtering
    # model
    backbone: str = "mf"
    d: int = 100
    peo: bool = True
    peo_bias: bool = True
    msvr_mode: str = "ui"
    enhance: str = "replace"
    coalition_cap: int = 128
    lambda1: float = 1.0
    lambda2: float = 1.0
    ms_objective: str = "minimize"
    # optimisation
    epochs: int = 100
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    train_negatives: int = 20
    eval_negatives: int = 99
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}")
        if self.msvr_mode not in MSVR_MODES:
            raise ConfigError(f"msvr_mode must be one of {MSVR_MODES}")
        if self.enhance not in ENHANCE_MODES:
            raise ConfigError(f"enhance must be one of {ENHANCE_MODES}")
        if self.ms_objective not in MS_OBJECTIVES:
            raise ConfigError(f"ms_objective must be one of {MS_OBJECTIVES}")
        if self.split not in SPLIT_MODES:
            raise ConfigError(f"split must be one of {SPLIT_MODES}")
        if self.format not in DELIMITERS:
            raise ConfigError(f"format must be one of {sorted(DELIMITERS)}")
        if self.max_users < 0:
            raise ConfigError("max_users must be >= 0")
        if self.k_core < 1:
            raise ConfigError("k_core must be >= 1")
        if self.coalition_cap < 2:
            raise ConfigError("coalition_cap must be >= 2")
        if self.train_negatives < 1 or self.eval_negatives < 1:
            raise ConfigError("negative counts must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def user_side(self) -> bool:
        return self.msvr_mode in ("u", "ui")

    @property
    def item_side(self) -> bool:
        return self.msvr_mode in ("i", "ui")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "on" if value else "off"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("on", "true", "yes", "1"):
            return True
        if lowered in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected on/off, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_overrides(pairs: dict[str, str]) -> dict:
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def parse_config_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """File keys first, then ``overrides`` (raw strings, e.g. from CLI flags)."""
    pairs = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            pairs.update(parse_config_text(fh.read()))
    pairs.update(overrides or {})
    return ExperimentConfig(**parse_overrides(pairs))
