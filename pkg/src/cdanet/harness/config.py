"""Experiment configuration: one declarative YAML file with nested sections
for the model variant, preprocessing, loss weights and optimizer. CLI flags
override file values; the CDANET_DATA_ROOT environment variable overrides
the configured data root."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from ..losses import LossWeights
from ..network import ModelVariantSpec
from ..preprocess import PreprocessConfig

DATA_ROOT_ENV = "CDANET_DATA_ROOT"


@dataclass
class OptimizerConfig:
    """Adam-style adaptive optimizer settings."""

    name: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.name.lower() not in ("adam", "adamw"):
            raise ValueError(f"unsupported optimizer {self.name!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class ExperimentConfig:
    variant: ModelVariantSpec = field(default_factory=ModelVariantSpec)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 10
    steps_per_epoch: int | None = None
    batch_size: int = 1
    n_folds: int = 5
    seed: int = 0
    eval_every: int = 1
    data_root: str = "data"
    output_root: str = "runs"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs, batch_size and eval_every must be positive")
        if self.n_folds < 2:
            raise ValueError(f"n_folds must be at least 2, got {self.n_folds}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive when given")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = asdict(self.variant)
        d["preprocess"] = asdict(self.preprocess)
        d["loss"] = asdict(self.loss)
        d["optimizer"] = asdict(self.optimizer)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        sections = {
            "variant": ModelVariantSpec,
            "preprocess": PreprocessConfig,
            "loss": LossWeights,
            "optimizer": OptimizerConfig,
        }
        kwargs = {}
        for key, typ in sections.items():
            if key in raw:
                section = raw.pop(key) or {}
                kwargs[key] = typ(**section)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs.update(raw)
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
        return cls.from_dict(raw)

    def to_yaml(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    def resolved_data_root(self) -> Path:
        return Path(os.environ.get(DATA_ROOT_ENV, self.data_root))

    def with_variant(self, variant_name: str) -> "ExperimentConfig":
        return replace(self, variant=replace(self.variant, variant=variant_name))


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    """Config file plus flat overrides; dotted keys reach nested sections."""
    cfg = ExperimentConfig.from_yaml(path) if path else ExperimentConfig()
    if not overrides:
        return cfg
    raw = cfg.to_dict()
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split(".")
        target = raw
        for part in parts[:-1]:
            target = target[part]
        if parts[-1] not in target:
            raise ValueError(f"unknown config override {key!r}")
        target[parts[-1]] = value
    return ExperimentConfig.from_dict(raw)
