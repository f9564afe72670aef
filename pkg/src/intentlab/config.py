"""Versioned YAML experiment configuration.

A config file has a top-level ``version`` plus ``model``, ``train``,
``eval`` and ``study`` sections, each mapping onto a dataclass. Unknown
keys are rejected at every level so typos fail loudly instead of silently
running with defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainSettings

CONFIG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EvalSettings:
    threshold: float = 0.5
    batch_size: int = 64

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"eval threshold must be in [0, 1], got {self.threshold}")
        if self.batch_size < 1:
            raise ConfigError("eval batch_size must be positive")


@dataclass(frozen=True)
class StudySettings:
    levels: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    target: str = "object"
    granularity: str = "region"
    fine_tune: bool = False

    def __post_init__(self):
        if self.target not in ("object", "context"):
            raise ConfigError(f"study target must be 'object' or 'context', got {self.target!r}")
        if self.granularity not in ("region", "pixel"):
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if len(self.levels) < 2:
            raise ConfigError("a study needs at least two levels")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    study: StudySettings = field(default_factory=StudySettings)


def _build_section(cls, section, name: str):
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {unknown}")
    coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in section.items()}
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"bad section {name!r}: {exc}") from None


def parse_experiment_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a mapping")
    data = dict(data)
    version = data.pop("version", None)
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError(f"config version must be {CONFIG_FORMAT_VERSION}, got {version!r}")
    sections = {
        "model": ModelConfig,
        "train": TrainSettings,
        "eval": EvalSettings,
        "study": StudySettings,
    }
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}")
    built = {name: _build_section(cls, data.get(name), name)
             for name, cls in sections.items()}
    return ExperimentConfig(**built)


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return parse_experiment_config(data)


def dump_experiment_config(config: ExperimentConfig, path) -> None:
    payload = {"version": CONFIG_FORMAT_VERSION}
    for name in ("model", "train", "eval", "study"):
        section = dataclasses.asdict(getattr(config, name))
        payload[name] = {k: list(v) if isinstance(v, tuple) else v
                         for k, v in section.items()}
    with open(path, "w") as fh:
        yaml.safe_dump(payload, fh, sort_keys=True)
