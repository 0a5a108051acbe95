"""Lookback windows of prices and returns fed to the network.

A window ending at return-date ``t`` is a ``(k, 2n)`` matrix with columns
``[price_1, return_1, price_2, return_2, ...]``; row ``k-1`` is ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ContractError, InsufficientDataError, WindowError
from .market_data import PriceTable, ReturnTable, as_date

NORMALIZATIONS = ("window-relative", "none")


@dataclass(frozen=True)
class FeatureConfig:
    lookback: int = 50
    price_normalization: str = "window-relative"

    def __post_init__(self):
        if self.lookback < 2:
            raise ConfigError(f"lookback must be >= 2, got {self.lookback}")
        if self.price_normalization not in NORMALIZATIONS:
            raise ConfigError(f"price_normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class FeatureWindow:
    timestamp: np.datetime64
    matrix: np.ndarray


def aligned_closes(prices: PriceTable, returns: ReturnTable) -> np.ndarray:
    """Close prices on each return date."""
    idx = np.searchsorted(prices.dates, returns.dates)
    if np.any(idx >= len(prices)) or np.any(prices.dates[np.minimum(idx, len(prices) - 1)] != returns.dates):
        raise ContractError("price and return tables are not aligned")
    if prices.asset_names != returns.asset_names:
        raise ContractError("price and return tables list different assets")
    return prices.closes[idx]


def feature_tensor(
    closes: np.ndarray,
    returns: np.ndarray,
    end_indices: Sequence[int],
    config: FeatureConfig,
) -> np.ndarray:
    """Stack windows ending at each index into a ``(B, k, 2n)`` array.

    ``closes`` and ``returns`` are row-aligned ``(T, n)`` arrays.
    """
    k = config.lookback
    ends = np.asarray(end_indices, dtype=np.int64)
    if ends.size and (ends.min() < k - 1 or ends.max() >= returns.shape[0]):
        raise WindowError(f"window end index out of range for lookback {k}")
    rows = ends[:, None] + np.arange(-k + 1, 1)[None, :]
    p = closes[rows]
    if config.price_normalization == "window-relative":
        p = p / p[:, -1:, :]
    r = returns[rows]
    B, n = ends.shape[0], returns.shape[1]
    out = np.empty((B, k, 2 * n))
    out[:, :, 0::2] = p
    out[:, :, 1::2] = r
    return out


def build_window(prices: PriceTable, returns: ReturnTable, t, config: FeatureConfig) -> FeatureWindow:
    t = as_date(t)
    i = int(np.searchsorted(returns.dates, t))
    if i >= len(returns) or returns.dates[i] != t:
        raise WindowError(f"{t} is not a return date")
    if i < config.lookback - 1:
        raise WindowError(
            f"insufficient history at {t}: {i + 1} returns, need {config.lookback}"
        )
    closes = aligned_closes(prices, returns)
    m = feature_tensor(closes, returns.returns, [i], config)[0]
    m.setflags(write=False)
    return FeatureWindow(t, m)


def window_stream(
    prices: PriceTable,
    returns: ReturnTable,
    config: FeatureConfig,
    date_range=None,
) -> Iterator[FeatureWindow]:
    """Yield windows for every return date in ``date_range`` (inclusive)
    that has enough history."""
    closes = aligned_closes(prices, returns)
    mask = np.arange(len(returns)) >= config.lookback - 1
    if date_range is not None:
        lo, hi = date_range
        if lo is not None:
            mask &= returns.dates >= as_date(lo)
        if hi is not None:
            mask &= returns.dates <= as_date(hi)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise InsufficientDataError("no date in range has a full lookback window")
    for i in idx:
        m = feature_tensor(closes, returns.returns, [i], config)[0]
        m.setflags(write=False)
        yield FeatureWindow(returns.dates[i], m)


def feature_labels(asset_names: Sequence[str], lookback: int) -> list[str]:
    """Labels in (asset, kind, lag) order; lag 0 is the most recent row."""
    return [
        f"{a}_{kind}_lag{j}"
        for a in asset_names
        for kind in ("price", "return")
        for j in range(lookback)
    ]


def flatten_by_label(matrices: np.ndarray) -> np.ndarray:
    """Reorder ``(..., k, 2n)`` windows into vectors matching ``feature_labels``."""
    m = np.asarray(matrices)
    k, w = m.shape[-2], m.shape[-1]
    # (..., k, 2n) -> (..., 2n, k) with lag 0 first
    m = np.swapaxes(m[..., ::-1, :], -1, -2)
    return m.reshape(*m.shape[:-2], w * k)
