"""Experiment configuration files.

INI-style text with sections ``[data]``, ``[noise]``, ``[train]``, ``[ssl]``
and ``[ablation]``. Every key is optional; unknown keys are rejected and all
defaults are materialised on parse. Tuples are comma separated, class groups
for asymmetric noise are ``;``-separated tuples (``0,1;2,3``).
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, replace

from .datasets import NoiseSpec
from .errors import ConfigError
from .ssl import SslConfig
from .trainer import ABLATIONS, TrainConfig

SECTIONS = ("data", "noise", "train", "ssl", "ablation")


@dataclass(frozen=True)
class DataConfig:
    path: str = ""
    classes: int = 10
    per_class: int = 500
    dim: int = 16
    separation: float = 1.75
    seed: int = 1
    geometry_seed: int = 0
    test_per_class: int = 200
    test_seed: int = 100_001

    def __post_init__(self):
        if self.classes < 2 or self.per_class < 1 or self.dim < 2:
            raise ConfigError("data: classes >= 2, per_class >= 1 and dim >= 2 required")
        if self.separation <= 0:
            raise ConfigError("data.separation must be > 0")
        if self.test_per_class < 0:
            raise ConfigError("data.test_per_class must be >= 0")


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "none"
    ratio: float = 0.0
    seed: int = 0
    groups: tuple = ()

    def __post_init__(self):
        NoiseSpec(self.kind, self.ratio, self.seed)  # range and kind checks


@dataclass(frozen=True)
class AblationConfig:
    variant: str = "full"
    variants: tuple = ABLATIONS
    seeds: tuple = ()

    def __post_init__(self):
        for v in (self.variant, *self.variants):
            if v not in ABLATIONS:
                raise ConfigError(f"ablation: unknown variant {v!r}; expected one of {ABLATIONS}")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    checkpoint_every: int = 0

    def with_overrides(self, seed=None, ablation=None, e_max=None, e_warm=None):
        train = self.train
        changes = {k: v for k, v in (("seed", seed), ("ablation", ablation),
                                     ("e_max", e_max), ("e_warm", e_warm)) if v is not None}
        if changes:
            train = _build(TrainConfig, "train", {**_fields(train), **changes})
            _check_cross(train)
        ablation_cfg = self.ablation
        if ablation is not None:
            ablation_cfg = replace(ablation_cfg, variant=ablation)
        return replace(self, train=train, ablation=ablation_cfg)


def _fields(obj):
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def _convert(section, key, raw, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if key == "groups":
                return tuple(tuple(int(c) for c in g.split(",")) for g in raw.split(";") if g.strip())
            items = [s.strip() for s in raw.split(",") if s.strip()]
            sample = default[0] if default else None
            if isinstance(sample, str):
                return tuple(items)
            if isinstance(sample, float):
                return tuple(float(s) for s in items)
            return tuple(int(s) for s in items)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def _build(cls, section, values):
    try:
        return cls(**values)
    except ConfigError as exc:
        raise ConfigError(f"[{section}] {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _check_cross(train):
    if train.e_warm >= train.e_max:
        raise ConfigError(f"train.e_warm ({train.e_warm}) must be < train.e_max ({train.e_max})")


_SECTION_TYPES = {
    "data": DataConfig,
    "noise": NoiseConfig,
    "ssl": SslConfig,
    "ablation": AblationConfig,
}
# [train] keys that are not TrainConfig fields
_TRAIN_EXTRA = {"checkpoint_every": 0}
_TRAIN_KEYS = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name not in ("ssl", "ablation")}


def parse_config(source):
    """Parse a path or config text into an :class:`ExperimentConfig`."""
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = str(source)
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")

    built = {}
    for name, cls in _SECTION_TYPES.items():
        defaults = {f.name: _default(f) for f in dataclasses.fields(cls)}
        values = dict(defaults)
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in defaults:
                    raise ConfigError(f"unknown key {name}.{key}")
                values[key] = _convert(name, key, raw, defaults[key])
        built[name] = _build(cls, name, values)

    train_defaults = {k: _default(f) for k, f in _TRAIN_KEYS.items()}
    train_values = dict(train_defaults)
    extra = dict(_TRAIN_EXTRA)
    if parser.has_section("train"):
        for key, raw in parser.items("train"):
            if key in train_defaults:
                train_values[key] = _convert("train", key, raw, train_defaults[key])
            elif key in extra:
                extra[key] = _convert("train", key, raw, extra[key])
            else:
                raise ConfigError(f"unknown key train.{key}")
    train_values["ssl"] = built["ssl"]
    train_values["ablation"] = built["ablation"].variant
    train = _build(TrainConfig, "train", train_values)
    _check_cross(train)
    if extra["checkpoint_every"] < 0:
        raise ConfigError("train.checkpoint_every must be >= 0")
    if built["noise"].kind == "asymmetric" and built["noise"].groups:
        from .datasets import circular_flip_map
        try:
            circular_flip_map(built["data"].classes, built["noise"].groups)
        except ConfigError as exc:
            raise ConfigError(f"noise.groups: {exc}") from None
    return ExperimentConfig(built["data"], built["noise"], train, built["ablation"],
                            extra["checkpoint_every"])


def _default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _format_value(value):
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ";".join(",".join(map(str, g)) for g in value)
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg):
    """Effective configuration as config-file text (round-trips through parse)."""
    sections = {
        "data": _fields(cfg.data),
        "noise": _fields(cfg.noise),
        "train": {**{k: getattr(cfg.train, k) for k in _TRAIN_KEYS},
                  "checkpoint_every": cfg.checkpoint_every},
        "ssl": _fields(cfg.train.ssl),
        "ablation": _fields(cfg.ablation),
    }
    out = []
    for name, values in sections.items():
        out.append(f"[{name}]")
        out += [f"{k} = {_format_value(v)}" for k, v in values.items()]
        out.append("")
    return "\n".join(out)


def config_to_dict(cfg):
    return {
        "data": _fields(cfg.data),
        "noise": _fields(cfg.noise),
        "train": {k: getattr(cfg.train, k) for k in _TRAIN_KEYS},
        "ssl": _fields(cfg.train.ssl),
        "ablation": _fields(cfg.ablation),
        "checkpoint_every": cfg.checkpoint_every,
    }
