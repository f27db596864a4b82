"""Run configuration.

A single JSON file can steer every command; unknown keys are rejected so a
typo fails loudly instead of silently using a default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

__all__ = ["RunConfig", "TrainConfig", "FcnConfig", "HeuristicConfig",
           "GridConfig", "ConfigError", "load_config"]


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    f: int = 10
    gru_units: int = 120
    gru_layers: int = 2
    cell: str = "gru"
    kernels: int = 64
    dropout_rate: float = 0.2
    learning_rate: float = 1e-4
    epochs: int = 60
    batch_size: int = 64
    patience: int = 10
    class_weighting: bool = True
    augment: bool = True
    stacking: bool = True
    pretrain_epochs: int = 6
    gan_steps: int = 200
    gan_batch_size: int = 64
    gan_learning_rate: float = 2e-4
    gap_fraction: float = 0.10
    use_dft: bool = True


@dataclass
class FcnConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    patience: int = 7
    class_weighting: bool = True


@dataclass
class HeuristicConfig:
    window_samples: int = 30
    stride_samples: int = 10
    top_jumps: int = 2


@dataclass
class GridConfig:
    f: tuple = (5, 10, 20)
    gru_units: tuple = (60, 120, 180)
    cell: tuple = ("gru", "lstm")
    learning_rate: tuple = (1e-3, 1e-4, 1e-5)
    epochs: int = 10


@dataclass
class SynthConfig:
    n_rides: int = 500
    amplitude_sigma: float = 6.0
    incident_rate: float = 1.6
    brake_fraction: float = 0.7
    region: str = "synthtown"


@dataclass
class RunConfig:
    seed: int = 0
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    normalize: bool = True
    max_workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    fcn: FcnConfig = field(default_factory=FcnConfig)
    heuristic: HeuristicConfig = field(default_factory=HeuristicConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


_SECTIONS = {"train": TrainConfig, "fcn": FcnConfig, "heuristic": HeuristicConfig,
             "grid": GridConfig, "synth": SynthConfig}


def _build(cls, payload: dict, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected an object, got {type(payload).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name not in payload:
            continue
        value = payload[f.name]
        # JSON has no tuples; grid axes arrive as lists
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    return cls(**coerced)


def load_config(path) -> RunConfig:
    """Read a JSON config file, overlaying it on the defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be an object")
    top_names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(payload) - top_names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in payload.items():
        if name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value, f"{path}:{name}")
        else:
            kwargs[name] = value
    return RunConfig(**kwargs)
