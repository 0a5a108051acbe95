"""Run configuration: one JSON document, unknown keys rejected.

Precedence is command-line flags > file > defaults.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Any

from .backtest import STRATEGIES, BacktestConfig
from .baselines import BaselineConfig, SimplexSolverConfig
from .errors import ConfigError, IOFailure
from .features import FeatureConfig
from .objective import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    assets: tuple | None = None


@dataclass(frozen=True)
class WalkForwardConfig:
    first_test_start: str | None = None
    retrain_every_years: int = 2


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = DataConfig()
    features: FeatureConfig = FeatureConfig()
    train: TrainConfig = TrainConfig()
    backtest: BacktestConfig = BacktestConfig()
    walk_forward: WalkForwardConfig = WalkForwardConfig()
    baselines: BaselineConfig = BaselineConfig()
    strategies: tuple = STRATEGIES

    def __post_init__(self):
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies: {', '.join(bad)}")

    def to_dict(self) -> dict:
        return _to_plain(self)

    def override(self, section: str | None = None, **values) -> "RunConfig":
        if section is None:
            return dataclasses.replace(self, **values)
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **values)})


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


_NESTED = {
    (RunConfig, "data"): DataConfig,
    (RunConfig, "features"): FeatureConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "backtest"): BacktestConfig,
    (RunConfig, "walk_forward"): WalkForwardConfig,
    (RunConfig, "baselines"): BaselineConfig,
    (BaselineConfig, "solver"): SimplexSolverConfig,
}


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        sub = _NESTED.get((cls, key))
        path = f"{where}.{key}" if where else key
        if sub is not None:
            value = _build(sub, value, path)
        elif isinstance(value, list):
            value = tuple(value)
        elif key == "allocations" and isinstance(value, dict):
            value = {k: tuple(v) for k, v in value.items()}
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "")


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise IOFailure(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return config_from_dict(raw)
