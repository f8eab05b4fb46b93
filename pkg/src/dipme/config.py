"""Run configuration: one JSON document covering every pipeline stage.

Unknown keys are rejected so typos fail loudly. Flag-level overrides are
applied by the CLI after the file loads.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .mce import MceConfig, TrainConfig


@dataclass
class SimulatorSection:
    n_per_class: int = 40
    n_operators: int = 1
    operator_seed: int = 0
    depth_m: float = 0.135
    common_mode_correlation: float = 0.5


@dataclass
class FilterSection:
    order: int = 5
    cutoff_hz: float = 5.0
    sample_rate_hz: float = 100.0
    mode: str = "zero-phase"


@dataclass
class PreprocessSection:
    nominal_speed: float = 0.05
    window_len: int = 128
    stride: int = 64
    # train on randomly offset windows over the full-depth series instead of
    # the stride-locked 251-length cut; use for service/mapping checkpoints
    offset_jitter: bool = False
    windows_per_recording: int = 4


@dataclass
class EvalSection:
    protocol: str = "kfold"
    k: int = 10
    loo_group_size: int = 1
    n_folders: int = 7
    n_test_folders: int = 3


@dataclass
class SweepSection:
    lengths: tuple = (32, 64, 128, 251)


@dataclass
class ServeSection:
    port: int = 8000
    instant_sampling: bool = False
    persistence: str | None = None
    sampling_delay_s: float = 1.28


@dataclass
class RunConfig:
    seed: int = 0
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    filter: FilterSection = field(default_factory=FilterSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    mce: MceConfig = field(default_factory=MceConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    serve: ServeSection = field(default_factory=ServeSection)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTION_TYPES = {
    "simulator": SimulatorSection,
    "filter": FilterSection,
    "preprocess": PreprocessSection,
    "mce": MceConfig,
    "train": TrainConfig,
    "eval": EvalSection,
    "sweep": SweepSection,
    "serve": ServeSection,
}


def _build_section(cls, data: dict, path: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    coerced = dict(data)
    for f in fields(cls):
        if f.name in coerced and isinstance(coerced[f.name], list):
            coerced[f.name] = tuple(coerced[f.name])
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path} section: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    allowed = {"seed"} | set(_SECTION_TYPES)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = data["seed"]
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            kwargs[name] = _build_section(cls, data[name], name)
    return RunConfig(**kwargs)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as f:
        return config_from_dict(json.load(f))
