"""YAML experiment configuration with every default spelled out."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corruption import CorruptionSpec, Pattern
from .data_io import SynthSpec
from .metrics import PAPER_RATES
from .model import ConfigError, ModelConfig
from .training import TrainConfig


@dataclass
class EvalConfig:
    split: str = "test"
    pattern: str = "TM"
    rate: float = 0.0
    seed: int = 0
    rates: tuple[float, ...] = PAPER_RATES
    patterns: tuple[str, ...] = ("RM", "TM", "STM")

    def __post_init__(self):
        if self.split not in ("train", "val", "test", "all"):
            raise ConfigError(f"split must be train, val, test or all, got {self.split!r}")
        self.rates = tuple(float(r) for r in self.rates)
        if any(not 0.0 <= r <= 1.0 for r in self.rates) or any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise ConfigError("rates must be strictly increasing values in [0, 1]")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"rate must lie in [0, 1], got {self.rate}")
        try:
            self.pattern = Pattern.parse(self.pattern).value
            self.patterns = tuple(Pattern.parse(p).value for p in self.patterns)
        except ValueError as e:
            raise ConfigError(str(e)) from None


@dataclass
class CorruptConfig:
    pattern: str = "TM"
    rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.pattern = self.spec().pattern.value

    def spec(self) -> CorruptionSpec:
        try:
            return CorruptionSpec(self.pattern, self.rate, self.seed)
        except ValueError as e:
            raise ConfigError(str(e)) from None


@dataclass
class ExperimentConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    corrupt: CorruptConfig = field(default_factory=CorruptConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, Pattern):
        return obj.value
    return obj


def to_dict(cfg: ExperimentConfig) -> dict:
    return _plain(cfg)


def dump(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=False)


def _build(cls, values: dict | None, where: str):
    values = dict(values or {})
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    if cls is TrainConfig and "model" in values:
        values["model"] = _build(ModelConfig, values["model"], f"{where}.model")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def from_dict(raw: dict | None) -> ExperimentConfig:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    sections = {"synth": SynthSpec, "corrupt": CorruptConfig, "train": TrainConfig, "eval": EvalConfig}
    unknown = sorted(set(raw) - set(sections))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    for name, value in raw.items():
        if value is not None and not isinstance(value, dict):
            raise ConfigError(f"section {name} must be a mapping")
    return ExperimentConfig(**{name: _build(cls, raw.get(name), name) for name, cls in sections.items()})


def load(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from None
    return from_dict(raw)
