"""Run configuration: one JSON document with model/mfcc/train/augment/data sections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from digitrec.augment import AugmentationPolicy
from digitrec.errors import ConfigError
from digitrec.features import MfccConfig
from digitrec.model import ModelConfig
from digitrec.training import Hyperparams


@dataclass(frozen=True)
class DataConfig:
    n_per_class: int = 200
    rate: int = 11025  # off the feature rate on purpose, so resampling is exercised
    expand_factor: int = 5

    def __post_init__(self):
        if self.n_per_class < 1 or self.rate < 1 or self.expand_factor < 1:
            raise ValueError("n_per_class, rate and expand_factor must be positive")


# Reduced network that trains the desk-scale corpus in well under an hour on
# one CPU core. The layer chain is the full one; only widths and depth shrink.
DESK_MODEL = ModelConfig(cnn_channels=8, bridge_out=64, rnn_hidden=64, n_rnn_blocks=2)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    train: Hyperparams = field(default_factory=Hyperparams)
    augment: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    data: DataConfig = field(default_factory=DataConfig)

    def to_json(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        d["train"]["split_ratios"] = list(self.train.split_ratios)
        d["augment"]["noise_categories"] = [c.value for c in self.augment.noise_categories]
        d["augment"]["speed_range"] = list(self.augment.speed_range)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            values = d.get(name, {})
            if not isinstance(values, dict):
                raise ConfigError(f"section {name!r} must be an object")
            kwargs[name] = _build(section_cls, values, name)
        return cls(**kwargs)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply ``{"section.key": value}`` overrides, e.g. from command-line flags."""
        d = self.to_json()
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in d or name not in d[section]:
                raise ConfigError(f"unknown config key {key!r}")
            d[section][name] = value
        return RunConfig.from_json(d)


_SECTIONS = {
    "model": ModelConfig,
    "mfcc": MfccConfig,
    "train": Hyperparams,
    "augment": AugmentationPolicy,
    "data": DataConfig,
}


def _build(section_cls, values: dict, section: str):
    known = {f.name for f in fields(section_cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return section_cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def desk_config(**train_overrides) -> RunConfig:
    return RunConfig(model=DESK_MODEL, train=replace(Hyperparams(dtype="float32"), **train_overrides))


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}") from exc
    return RunConfig.from_json(raw)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
