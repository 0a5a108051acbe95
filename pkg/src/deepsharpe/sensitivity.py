"""Input-feature sensitivities of the block Sharpe ratio.

For each evaluation block the gradient of the block objective w.r.t. every
window entry is taken by reverse mode, averaged in absolute value over the
block's windows, and normalized so the most influential feature scores 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnet import ModelParams, backward, forward_batch
from .errors import DegenerateVarianceError, InsufficientDataError
from .features import FeatureConfig, feature_labels, flatten_by_label
from .market_data import dump_table
from .objective import TrainingBatch, make_batches, portfolio_returns, sharpe_gradient_wrt_returns, sharpe_value


@dataclass(frozen=True)
class SensitivityMap:
    dates: np.ndarray
    values: np.ndarray   # (m, 2nk) in [0, 1]
    labels: tuple
    flagged: np.ndarray  # rows whose gradients were all zero or degenerate

    def write_csv(self, path) -> None:
        dump_table(path, self.dates, self.values, self.labels)


def input_gradients(params: ModelParams, batch: TrainingBatch) -> np.ndarray:
    """``(B, k, 2n)`` gradient of the block Sharpe ratio w.r.t. each window."""
    if not np.any(batch.next_returns):
        return np.zeros_like(batch.windows)
    w, trace = forward_batch(params, batch.windows)
    obj = sharpe_value(portfolio_returns(w, batch))
    if obj.degenerate:
        raise DegenerateVarianceError("block has zero portfolio-return variance")
    upstream = sharpe_gradient_wrt_returns(obj)[:, None] * batch.next_returns
    _, dX = backward(params, trace, upstream, return_inputs=True)
    return dX


def normalized_sensitivity(gradients) -> tuple[np.ndarray, np.ndarray]:
    """``|g| / max|g|`` per row; all-zero rows come back as zeros and flagged."""
    g = np.abs(np.atleast_2d(np.asarray(gradients, dtype=np.float64)))
    peak = g.max(axis=1, keepdims=True)
    flagged = peak[:, 0] == 0
    S = np.divide(g, peak, out=np.zeros_like(g), where=peak > 0)
    return S, flagged


def sensitivity_map(
    params: ModelParams,
    closes: np.ndarray,
    returns,
    first: int,
    last: int,
    feature_config: FeatureConfig,
    batch_size: int = 64,
) -> SensitivityMap:
    """One row per evaluation block over decision rows ``first..last``,
    dated at the block's last decision."""
    batches = make_batches(closes, returns.returns, first, last, feature_config, batch_size)
    if not batches:
        raise InsufficientDataError("sensitivity range is too short for one block")
    rows, dates, degenerate = [], [], []
    for b in batches:
        dates.append(returns.dates[b.decision_index[-1]])
        try:
            g = input_gradients(params, b)
        except DegenerateVarianceError:
            rows.append(np.zeros(b.windows.shape[1] * b.windows.shape[2]))
            degenerate.append(True)
            continue
        rows.append(flatten_by_label(np.abs(g).mean(axis=0)))
        degenerate.append(False)
    S, flagged = normalized_sensitivity(np.vstack(rows))
    labels = tuple(feature_labels(returns.asset_names, feature_config.lookback))
    return SensitivityMap(np.array(dates, dtype="datetime64[D]"), S, labels,
                          flagged | np.array(degenerate))
