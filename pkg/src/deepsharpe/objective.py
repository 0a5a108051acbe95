"""Batch Sharpe objective, its gradient, and the training loop.

A batch is a block of consecutive trading days: the window at decision date
``t`` produces weights that earn the asset returns of ``t+1``. The objective
over a block is the population-moment Sharpe ratio of those portfolio
returns, with no costs or volatility scaling.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diffnet import (
    AdamState,
    ModelParams,
    adam_step,
    backward,
    clip_by_global_norm,
    forward_batch,
)
from .errors import ConfigError, ContractError, DegenerateVarianceError, TrainingError
from .features import FeatureConfig, feature_tensor

logger = logging.getLogger(__name__)

VARIANCE_EPS = 1e-12


@dataclass(frozen=True)
class TrainingBatch:
    windows: np.ndarray        # (B, k, 2n)
    next_returns: np.ndarray   # (B, n); row b pairs with windows[b]
    decision_index: np.ndarray  # (B,) return-table rows of each decision

    def __post_init__(self):
        if self.windows.shape[0] != self.next_returns.shape[0]:
            raise ContractError("windows and next-day returns are not aligned")
        if self.decision_index.size > 1 and not np.all(np.diff(self.decision_index) == 1):
            raise ContractError("batch decisions must be on consecutive trading days")

    def __len__(self):
        return self.windows.shape[0]


@dataclass(frozen=True)
class ObjectiveValue:
    L: float
    mean: float
    second_moment: float
    returns: np.ndarray
    degenerate: bool = False

    @property
    def std(self) -> float:
        return math.sqrt(max(self.second_moment - self.mean ** 2, 0.0))


def portfolio_returns(weights, batch_or_returns) -> np.ndarray:
    """Per-sample ``sum_i w_i * r_i`` (weights decided the day before)."""
    r = getattr(batch_or_returns, "next_returns", batch_or_returns)
    w = np.asarray(weights, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if w.shape != r.shape:
        raise ContractError(f"weights {w.shape} and returns {r.shape} do not align")
    return np.einsum("bi,bi->b", w, r)


def sharpe_value(returns: Sequence[float]) -> ObjectiveValue:
    R = np.asarray(returns, dtype=np.float64)
    if R.ndim != 1 or R.size < 2:
        raise ContractError("the Sharpe objective needs at least 2 returns")
    m = float(R.mean())
    var = float(np.mean((R - m) ** 2))
    q = var + m * m
    # relative threshold keeps the flag invariant to rescaling the returns
    if var <= VARIANCE_EPS * q:
        return ObjectiveValue(math.nan, m, q, R, True)
    return ObjectiveValue(m / math.sqrt(var), m, q, R)


def sharpe_gradient_wrt_returns(returns) -> np.ndarray:
    """dL/dR_t for the population-moment Sharpe ratio."""
    obj = returns if isinstance(returns, ObjectiveValue) else sharpe_value(returns)
    if obj.degenerate:
        raise DegenerateVarianceError("portfolio returns have (near) zero variance")
    R, m = obj.returns, obj.mean
    B = R.size
    s = math.sqrt(float(np.mean((R - m) ** 2)))
    return 1.0 / (B * s) - m * (R - m) / (B * s ** 3)


def sharpe_gradient_wrt_weights(batch, weights) -> np.ndarray:
    """``(B, n)`` gradient of the block Sharpe ratio w.r.t. each weight vector."""
    r = np.asarray(getattr(batch, "next_returns", batch), dtype=np.float64)
    if not np.any(r):
        # portfolio return does not depend on the weights at all
        return np.zeros_like(r)
    dR = sharpe_gradient_wrt_returns(portfolio_returns(weights, r))
    return dR[:, None] * r


def make_batches(
    closes: np.ndarray,
    returns: np.ndarray,
    first_decision: int,
    last_decision: int,
    feature_config: FeatureConfig,
    batch_size: int | None = 64,
) -> list[TrainingBatch]:
    """Contiguous blocks of decisions ``first_decision..last_decision``.

    Decision ``t`` is paired with the return row ``t+1``. Blocks shorter than
    ``batch_size`` at the end are dropped unless no full block exists. With
    ``batch_size=None`` everything goes into a single batch.
    """
    lo = max(first_decision, feature_config.lookback - 1)
    hi = min(last_decision, returns.shape[0] - 2)
    if hi - lo + 1 < 2:
        return []
    idx = np.arange(lo, hi + 1)
    if batch_size is None or idx.size <= batch_size:
        chunks = [idx]
    else:
        full = idx.size // batch_size
        chunks = [idx[j * batch_size:(j + 1) * batch_size] for j in range(full)]
    return [
        TrainingBatch(feature_tensor(closes, returns, c, feature_config), returns[c + 1], c)
        for c in chunks
    ]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    hidden: int = 64
    seed: int = 0
    validation_fraction: float = 0.10
    shuffle_blocks: bool = True
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 2 or self.hidden < 1:
            raise ConfigError("epochs >= 0, batch_size >= 2 and hidden >= 1 are required")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")

    def fresh_adam(self, params: ModelParams) -> AdamState:
        return AdamState.fresh(
            params,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.adam_eps,
        )


@dataclass
class EpochSummary:
    epoch: int
    train_L: float
    validation_L: float
    gradient_norm: float
    wall_time: float
    skipped: int = 0


def batch_objective(params: ModelParams, batch: TrainingBatch) -> ObjectiveValue:
    w, _ = forward_batch(params, batch.windows)
    return sharpe_value(portfolio_returns(w, batch))


def evaluate(params: ModelParams, batches: Sequence[TrainingBatch]) -> float:
    """Mean Sharpe over non-degenerate batches (nan if none)."""
    vals = [batch_objective(params, b) for b in batches]
    vals = [v.L for v in vals if not v.degenerate]
    return float(np.mean(vals)) if vals else math.nan


def train_epoch(
    params: ModelParams,
    batches: Sequence[TrainingBatch],
    adam: AdamState,
    rng_seed: int,
    *,
    clip_norm: float | None = 5.0,
    shuffle: bool = True,
    validation: Sequence[TrainingBatch] = (),
    epoch: int = 0,
) -> tuple[ModelParams, AdamState, EpochSummary]:
    if not batches:
        raise ContractError("train_epoch needs at least one batch")
    start = time.perf_counter()
    order = np.arange(len(batches))
    if shuffle:
        np.random.default_rng(rng_seed).shuffle(order)
    Ls, norms, skipped = [], [], 0
    for j in order:
        batch = batches[j]
        w, trace = forward_batch(params, batch.windows)
        obj = sharpe_value(portfolio_returns(w, batch))
        if obj.degenerate:
            logger.warning("skipping block at row %d: degenerate variance", batch.decision_index[0])
            skipped += 1
            continue
        if not math.isfinite(obj.L):
            raise TrainingError(f"non-finite objective in block at row {batch.decision_index[0]}")
        upstream = sharpe_gradient_wrt_returns(obj)[:, None] * batch.next_returns
        grad = backward(params, trace, upstream)
        grad, norm = clip_by_global_norm(grad, clip_norm)
        try:
            params, adam = adam_step(params, grad, adam)
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}, block at row {batch.decision_index[0]}: {exc}") from None
        Ls.append(obj.L)
        norms.append(norm)
    summary = EpochSummary(
        epoch=epoch,
        train_L=float(np.mean(Ls)) if Ls else math.nan,
        validation_L=evaluate(params, validation) if validation else math.nan,
        gradient_norm=float(np.mean(norms)) if norms else 0.0,
        wall_time=time.perf_counter() - start,
        skipped=skipped,
    )
    return params, adam, summary


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    best_epoch: int
    best_validation_L: float
    history: list = field(default_factory=list)


def train_model(
    params: ModelParams,
    batches: Sequence[TrainingBatch],
    validation: Sequence[TrainingBatch],
    config: TrainConfig,
    log_path=None,
    on_epoch: Callable[[EpochSummary], None] | None = None,
) -> TrainResult:
    """Run ``config.epochs`` epochs and keep the parameters with the best
    validation Sharpe (the initial parameters count as epoch 0)."""
    adam = config.fresh_adam(params)
    best = TrainResult(params.copy(), adam.copy(), 0, evaluate(params, validation) if validation else math.nan)
    history = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(f"{log_path}.tmp", "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_L", "validation_L", "gradient_norm", "wall_time"])
    try:
        for epoch in range(1, config.epochs + 1):
            params, adam, summary = train_epoch(
                params,
                batches,
                adam,
                config.seed * 100_003 + epoch,
                clip_norm=config.clip_norm,
                shuffle=config.shuffle_blocks,
                validation=validation,
                epoch=epoch,
            )
            history.append(summary)
            if writer is not None:
                writer.writerow([epoch, summary.train_L, summary.validation_L,
                                 summary.gradient_norm, round(summary.wall_time, 4)])
            if on_epoch is not None:
                on_epoch(summary)
            v = summary.validation_L
            if not validation or (math.isfinite(v) and not (v <= best.best_validation_L)):
                best = TrainResult(params.copy(), adam.copy(), epoch, v)
    finally:
        if fh is not None:
            fh.close()
            os.replace(f"{log_path}.tmp", log_path)
    best.history = history
    return best
