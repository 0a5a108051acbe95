"""Seeded correlated geometric Brownian motion price series."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .market_data import TRADING_DAYS, PriceTable


@dataclass(frozen=True)
class SyntheticSpec:
    n_assets: int
    days: int
    drift: tuple                 # annualized arithmetic drift per asset
    volatility: tuple            # annualized volatility per asset
    correlation: np.ndarray = field(default=None, repr=False)
    seed: int = 0
    start: str = "2000-01-03"
    initial_price: float = 100.0
    asset_names: tuple = None

    def __post_init__(self):
        n = self.n_assets
        if n < 1 or self.days < 2:
            raise ConfigError("need n_assets >= 1 and days >= 2")
        drift = tuple(float(x) for x in np.broadcast_to(self.drift, (n,)))
        vol = tuple(float(x) for x in np.broadcast_to(self.volatility, (n,)))
        if any(v < 0 for v in vol):
            raise ConfigError("volatilities must be non-negative")
        corr = np.eye(n) if self.correlation is None else np.array(self.correlation, dtype=float)
        if corr.shape != (n, n) or not np.allclose(corr, corr.T, atol=1e-12):
            raise ConfigError("correlation must be a symmetric n x n matrix")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ConfigError("correlation must have a unit diagonal")
        if np.linalg.eigvalsh(corr).min() < -1e-10:
            raise ConfigError("correlation matrix is not positive semidefinite")
        corr.setflags(write=False)
        names = self.asset_names or tuple(f"A{i + 1}" for i in range(n))
        if len(names) != n:
            raise ConfigError("asset_names length must equal n_assets")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "volatility", vol)
        object.__setattr__(self, "correlation", corr)
        object.__setattr__(self, "asset_names", tuple(names))


def _sym_sqrt(corr: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(corr)
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def business_days(start, count: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(count), roll="forward")


def generate(spec: SyntheticSpec) -> PriceTable:
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_assets, spec.days
    mu = np.asarray(spec.drift)
    sig = np.asarray(spec.volatility)
    z = rng.standard_normal((T - 1, n)) @ _sym_sqrt(spec.correlation)
    dt = 1.0 / TRADING_DAYS
    steps = (mu - 0.5 * sig ** 2) * dt + sig * np.sqrt(dt) * z
    log_p = np.vstack([np.zeros(n), np.cumsum(steps, axis=0)])
    closes = spec.initial_price * np.exp(log_p)
    return PriceTable(business_days(spec.start, T), closes, spec.asset_names)


def planted_signal_spec(
    strong_asset: int,
    sharpe_level: float,
    n_assets: int = 4,
    volatility: float = 0.10,
    days: int = 4000,
    seed: int = 0,
    **kwargs,
) -> SyntheticSpec:
    """Uncorrelated assets; one has annualized Sharpe ``sharpe_level``, the rest zero drift."""
    if not 0 <= strong_asset < n_assets:
        raise ConfigError(f"strong_asset {strong_asset} out of range for {n_assets} assets")
    if not 0.0 < sharpe_level <= 4.0:
        raise ConfigError("sharpe_level must lie in (0, 4]")
    drift = np.zeros(n_assets)
    drift[strong_asset] = sharpe_level * volatility
    return SyntheticSpec(
        n_assets=n_assets,
        days=days,
        drift=tuple(drift),
        volatility=(volatility,) * n_assets,
        correlation=np.eye(n_assets),
        seed=seed,
        **kwargs,
    )
