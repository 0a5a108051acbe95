"""Volatility-scaled, cost-charged backtests and walk-forward orchestration.

Position in asset ``i`` decided at close ``t-1`` is
``sigma_tgt / sigma_{i,t-1} * w_{i,t-1}``; it earns ``r_{i,t}`` and pays
``C * |position_{t-1} - position_{t-2}|`` summed over assets. The position
before the first decision is zero, so day one pays for the full entry.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import BASELINES, BaselineConfig, WeightPath, drift_weights
from .diffnet import ModelParams, forward_batch, init_params, load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    ContractError,
    DegenerateVolatilityError,
    InsufficientDataError,
    TrainingError,
)
from .features import FeatureConfig, aligned_closes, feature_tensor
from .market_data import (
    TRADING_DAYS,
    PriceTable,
    ReturnTable,
    VolEstimateTable,
    WalkForwardSplit,
    as_date,
    compute_returns,
    dump_table,
    ewm_volatility,
)
from .metrics import MetricBundle, compute_metrics
from .objective import TrainConfig, TrainResult, make_batches, train_model

logger = logging.getLogger(__name__)

STRATEGIES = (*BASELINES, "dls")


@dataclass(frozen=True)
class BacktestConfig:
    sigma_target: float = 0.10
    cost_rate: float = 0.0001
    scaling_enabled: bool = True
    annualization_factor: int = TRADING_DAYS
    vol_span: int = 50
    vol_floor: float | None = None

    def __post_init__(self):
        if not self.sigma_target > 0:
            raise ConfigError("sigma_target must be positive")
        if self.cost_rate < 0:
            raise ConfigError("cost_rate must be non-negative")
        if self.vol_floor is not None and self.vol_floor <= 0:
            raise ConfigError("vol_floor must be positive when set")


@dataclass(frozen=True)
class ScaledPositionPath:
    dates: np.ndarray
    positions: np.ndarray
    asset_names: tuple = ()


@dataclass(frozen=True)
class EquityCurve:
    """Row ``j`` is the day a position is held through; ``net = gross - cost``."""

    dates: np.ndarray
    gross: np.ndarray
    cost: np.ndarray
    net: np.ndarray
    cum_log_equity: np.ndarray
    turnover: np.ndarray

    def __len__(self):
        return self.dates.shape[0]


@dataclass(frozen=True)
class MarketData:
    prices: PriceTable
    returns: ReturnTable
    closes: np.ndarray       # closes aligned to return dates
    vols: VolEstimateTable

    @classmethod
    def from_prices(cls, prices: PriceTable, vol_span: int = 50,
                    annualization_factor: int = TRADING_DAYS) -> "MarketData":
        returns = compute_returns(prices)
        return cls(prices, returns, aligned_closes(prices, returns),
                   ewm_volatility(returns, vol_span, annualization_factor))


def scaled_positions(weights: WeightPath, returns: ReturnTable, vols: VolEstimateTable | None,
                     config: BacktestConfig) -> tuple[ScaledPositionPath, np.ndarray]:
    """Positions per decision date plus their row indices in ``returns``."""
    idx = np.searchsorted(returns.dates, weights.dates)
    if len(weights) == 0:
        raise InsufficientDataError("empty weight path")
    if np.any(idx >= len(returns)) or np.any(returns.dates[np.minimum(idx, len(returns) - 1)] != weights.dates):
        raise ContractError("weight dates are not return dates")
    if np.any(np.diff(idx) != 1):
        raise ContractError("weight path must cover consecutive trading days")
    w = weights.weights
    if not config.scaling_enabled:
        return ScaledPositionPath(weights.dates, w.copy(), weights.asset_names), idx
    if vols is None:
        raise ContractError("volatility estimates required when scaling is enabled")
    if idx[0] < vols.warmup:
        raise ContractError(
            f"weights start at {weights.dates[0]}, inside the {vols.warmup}-day volatility warmup"
        )
    sig = vols.sigma[idx]
    if config.vol_floor is not None:
        sig = np.maximum(sig, config.vol_floor)
    zero = np.argwhere(~(sig > 0))
    if zero.size:
        t, i = zero[0]
        raise DegenerateVolatilityError(
            f"zero volatility estimate on {weights.dates[t]} for {weights.asset_names[i] if weights.asset_names else i}"
        )
    return ScaledPositionPath(weights.dates, config.sigma_target / sig * w, weights.asset_names), idx


def apply_scaling_and_costs(
    weights: WeightPath,
    returns: ReturnTable,
    vols: VolEstimateTable | None,
    config: BacktestConfig,
) -> tuple[EquityCurve, ScaledPositionPath]:
    """Net daily returns of a weight path under volatility scaling and linear costs."""
    scaled, idx = scaled_positions(weights, returns, vols, config)
    P = scaled.positions
    m = P.shape[0] if idx[-1] + 1 < len(returns) else P.shape[0] - 1
    if m < 1:
        raise InsufficientDataError("no realized return after the last decision")
    r_next = returns.returns[idx[:m] + 1]
    gross = np.einsum("ti,ti->t", P[:m], r_next)
    prev = np.vstack([np.zeros((1, P.shape[1])), P[:m - 1]])
    turnover = np.abs(P[:m] - prev).sum(axis=1)
    cost = config.cost_rate * turnover
    net = gross - cost
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(np.log1p(net))
    curve = EquityCurve(returns.dates[idx[:m] + 1], gross, cost, net, cum, turnover)
    return curve, scaled


def active_turnover(weights: WeightPath, returns: ReturnTable) -> np.ndarray:
    """Per-day ``sum_i |w_t - drift(w_{t-1})|``: the part of each weight
    change that is a trade rather than price drift. Length ``len(weights)-1``."""
    idx = np.searchsorted(returns.dates, weights.dates)
    w = weights.weights
    drifted = drift_weights(w[:-1], returns.returns[idx[1:]])
    return np.abs(w[1:] - drifted).sum(axis=1)


def weight_turnover(weights: WeightPath) -> np.ndarray:
    return np.abs(np.diff(weights.weights, axis=0)).sum(axis=1)


# ---------------------------------------------------------------- DLS model

def dls_weight_path(params: ModelParams, data: MarketData, first: int, last: int,
                    feature_config: FeatureConfig, chunk: int = 512) -> WeightPath:
    """Model weights for decision rows ``first..last`` of the return table."""
    first = max(first, feature_config.lookback - 1)
    if last < first:
        raise InsufficientDataError("no decision dates with a full lookback window")
    idx = np.arange(first, last + 1)
    out = np.empty((idx.size, data.returns.n_assets))
    for s in range(0, idx.size, chunk):
        sel = idx[s:s + chunk]
        out[s:s + chunk], _ = forward_batch(params, feature_tensor(data.closes, data.returns.returns, sel, feature_config))
    return WeightPath(data.returns.dates[idx], out, data.returns.asset_names)


def split_batches(data: MarketData, split: WalkForwardSplit, feature_config: FeatureConfig,
                  batch_size: int):
    """Training blocks and one validation batch; each decision's next-day
    return stays inside its own range."""
    v0, t0 = split.validation.start, split.validation.stop
    fit = make_batches(data.closes, data.returns.returns, 0, v0 - 2, feature_config, batch_size)
    val = make_batches(data.closes, data.returns.returns, v0 - 1, t0 - 2, feature_config, None)
    return fit, val


def train_split(data: MarketData, split: WalkForwardSplit, train_config: TrainConfig,
                feature_config: FeatureConfig, seed: int, log_path=None) -> TrainResult:
    fit, val = split_batches(data, split, feature_config, train_config.batch_size)
    if not fit:
        raise InsufficientDataError(f"split {split.index}: no full training block")
    params = init_params(data.returns.n_assets, train_config.hidden, seed + split.index)
    result = train_model(params, fit, val, train_config, log_path=log_path)
    if not all(np.all(np.isfinite(a)) for a in result.params.arrays()):
        raise TrainingError(f"split {split.index}: parameters diverged")
    logger.info("split %d: best epoch %d, validation L %.4f", split.index,
                result.best_epoch, result.best_validation_L)
    return result


def checkpoint_name(split_index: int) -> str:
    return f"split_{split_index:02d}.npz"


def train_splits(data: MarketData, splits: Sequence[WalkForwardSplit], train_config: TrainConfig,
                 feature_config: FeatureConfig, seed: int, out_dir=None) -> list[TrainResult]:
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    results = []
    for split in splits:
        log_path = None
        if out_dir is not None:
            log_path = Path(out_dir) / f"train_log_{split.index:02d}.csv"
        res = train_split(data, split, train_config, feature_config, seed, log_path)
        if out_dir is not None:
            meta = {
                "split": split.index,
                "seed": seed + split.index,
                "best_epoch": res.best_epoch,
                "best_validation_L": res.best_validation_L,
                "test_range": [str(d) for d in split.test_range],
                "lookback": feature_config.lookback,
                "price_normalization": feature_config.price_normalization,
            }
            save_checkpoint(Path(out_dir) / checkpoint_name(split.index), res.params, res.adam, meta)
        results.append(res)
    return results


def load_split_params(checkpoint_dir, splits) -> dict[int, ModelParams]:
    out = {}
    for split in splits:
        params, _, _ = load_checkpoint(Path(checkpoint_dir) / checkpoint_name(split.index))
        out[split.index] = params
    return out


# ---------------------------------------------------------------- orchestration

@dataclass
class WalkForwardResult:
    strategy: str
    equity: EquityCurve
    weights: WeightPath
    positions: ScaledPositionPath
    metrics: MetricBundle
    active_turnover: np.ndarray
    training: list = field(default_factory=list)


def run_walk_forward(
    strategy: str,
    data: MarketData,
    splits: Sequence[WalkForwardSplit],
    train_config: TrainConfig = TrainConfig(),
    backtest_config: BacktestConfig = BacktestConfig(),
    seed: int = 0,
    *,
    feature_config: FeatureConfig = FeatureConfig(),
    baseline_config: BaselineConfig = BaselineConfig(),
    split_params: dict[int, ModelParams] | None = None,
    checkpoint_dir=None,
) -> WalkForwardResult:
    """Weights over every split's test window, concatenated, then scaled and
    charged in one pass so boundary turnover is paid like any other day."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    if not splits:
        raise InsufficientDataError("no walk-forward splits")
    rdates = data.returns.dates
    training = []
    if strategy == "dls":
        paths = []
        if split_params is None:
            training = train_splits(data, splits, train_config, feature_config, seed, checkpoint_dir)
            split_params = {s.index: r.params for s, r in zip(splits, training)}
        for split in splits:
            if split.index not in split_params:
                raise ConfigError(f"no parameters for split {split.index}")
            paths.append(dls_weight_path(split_params[split.index], data, split.test.start,
                                         split.test.stop - 1, feature_config))
        path = WeightPath.concat(paths)
    else:
        lo = rdates[splits[0].test.start]
        hi = rdates[splits[-1].test.stop - 1]
        path = BASELINES[strategy](data.prices, data.returns, lo, hi, baseline_config)
        path = path.select(lo, hi)
    equity, scaled = apply_scaling_and_costs(path, data.returns, data.vols, backtest_config)
    return WalkForwardResult(
        strategy,
        equity,
        path,
        scaled,
        compute_metrics(equity.net, backtest_config.annualization_factor),
        active_turnover(path, data.returns),
        training,
    )


@dataclass(frozen=True)
class WeightShiftTable:
    dates: np.ndarray
    weights: np.ndarray
    positions: np.ndarray
    asset_names: tuple

    def columns(self) -> list[str]:
        return [f"{a}_weight" for a in self.asset_names] + [f"{a}_scaled" for a in self.asset_names]

    def write_csv(self, path) -> None:
        dump_table(path, self.dates, np.hstack([self.weights, self.positions]), self.columns())


def weight_shift_series(path: WeightPath, scaled: ScaledPositionPath, date_range=None) -> WeightShiftTable:
    """Raw weights and scaled positions side by side for a date window."""
    if not np.array_equal(path.dates, scaled.dates):
        raise ContractError("weight path and scaled positions cover different dates")
    keep = np.ones(len(path), dtype=bool)
    if date_range is not None:
        lo, hi = date_range
        if lo is not None:
            keep &= path.dates >= as_date(lo)
        if hi is not None:
            keep &= path.dates <= as_date(hi)
    if not keep.any():
        raise InsufficientDataError("weight shift range selects no dates")
    return WeightShiftTable(path.dates[keep], path.weights[keep], scaled.positions[keep], path.asset_names)


# ---------------------------------------------------------------- outputs

def _write_json(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")
    os.replace(tmp, path)


def write_run(result: WalkForwardResult, out_dir, config_echo: dict, seed: int) -> Path:
    """Write equity/weights/scaled-position CSVs and ``report.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eq = result.equity
    dump_table(out / "equity.csv", eq.dates,
               np.column_stack([eq.gross, eq.cost, eq.net, eq.cum_log_equity]),
               ["gross", "cost", "net", "cum_log_equity"])
    names = result.weights.asset_names
    dump_table(out / "weights.csv", result.weights.dates, result.weights.weights, names)
    dump_table(out / "scaled_positions.csv", result.positions.dates, result.positions.positions, names)
    report = {
        "strategy": result.strategy,
        "metrics": result.metrics.to_json(),
        "test_days": len(eq),
        "mean_turnover": float(eq.turnover.mean()),
        "mean_active_turnover": float(result.active_turnover.mean()) if result.active_turnover.size else 0.0,
        "total_cost": float(eq.cost.sum()),
        "weight_flags": list(result.weights.flags),
        "conventions": {
            "day_one_cost": "charged on the full initial position",
            "split_boundaries": "scaling and costs applied once over the concatenated path",
        },
        "seed": seed,
        "config": config_echo,
    }
    _write_json(out / "report.json", report)
    return out
