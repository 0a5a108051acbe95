"""Classical comparison strategies.

Each strategy emits a :class:`WeightPath` whose row ``t`` is the long-only
weight vector decided at the close of ``t`` from information up to ``t``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, InsufficientDataError
from .market_data import PriceTable, ReturnTable, as_date

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9

# shares, bonds, commodities, volatility index
DEFAULT_ALLOCATIONS = {
    "alloc1": (0.25, 0.25, 0.25, 0.25),
    "alloc2": (0.50, 0.10, 0.20, 0.20),
    "alloc3": (0.10, 0.50, 0.20, 0.20),
    "alloc4": (0.40, 0.40, 0.10, 0.10),
}


@dataclass(frozen=True)
class WeightPath:
    dates: np.ndarray
    weights: np.ndarray
    asset_names: tuple = ()
    flags: tuple = ()

    def __post_init__(self):
        d = np.array(self.dates, dtype="datetime64[D]")
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != d.shape[0]:
            raise ContractError(f"weights shape {w.shape} does not match {d.shape[0]} dates")
        if w.size and (np.any(w < -SIMPLEX_TOL) or np.max(np.abs(w.sum(axis=1) - 1.0)) > SIMPLEX_TOL):
            raise ContractError("weight rows must lie on the simplex")
        d.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "dates", d)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "asset_names", tuple(self.asset_names))

    def __len__(self):
        return self.dates.shape[0]

    def select(self, start=None, end=None) -> "WeightPath":
        keep = np.ones(len(self), dtype=bool)
        if start is not None:
            keep &= self.dates >= as_date(start)
        if end is not None:
            keep &= self.dates <= as_date(end)
        return WeightPath(self.dates[keep], self.weights[keep], self.asset_names, self.flags)

    @staticmethod
    def concat(paths) -> "WeightPath":
        paths = list(paths)
        return WeightPath(
            np.concatenate([p.dates for p in paths]),
            np.concatenate([p.weights for p in paths]),
            paths[0].asset_names,
            tuple(sorted({f for p in paths for f in p.flags})),
        )


def _check_simplex(v, name="targets") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
        raise ConfigError(f"{name} must be a non-negative vector summing to 1")
    return v


def _range_mask(dates, start, end):
    keep = np.ones(dates.shape[0], dtype=bool)
    if start is not None:
        keep &= dates >= as_date(start)
    if end is not None:
        keep &= dates <= as_date(end)
    return keep


def fixed_allocation_path(returns: ReturnTable, targets, start=None, end=None) -> WeightPath:
    """Reset to ``targets`` on the first day and on the first trading day of
    each calendar year; in between the holdings drift with returns."""
    targets = _check_simplex(targets)
    if targets.size != returns.n_assets:
        raise ConfigError(f"allocation has {targets.size} entries for {returns.n_assets} assets")
    keep = np.flatnonzero(_range_mask(returns.dates, start, end))
    if keep.size == 0:
        raise InsufficientDataError("allocation path: empty date range")
    dates = returns.dates[keep]
    r = returns.returns[keep]
    years = dates.astype("datetime64[Y]")
    w = np.empty((keep.size, targets.size))
    w[0] = targets
    for t in range(1, keep.size):
        if years[t] != years[t - 1]:
            w[t] = targets
        else:
            grown = w[t - 1] * (1.0 + r[t])
            w[t] = grown / grown.sum()
    return WeightPath(dates, w, returns.asset_names)


def drift_weights(prev_weights: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Where yesterday's weights float to after today's returns, untraded."""
    grown = prev_weights * (1.0 + returns)
    return grown / grown.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class RollingEstimates:
    """Row ``t`` uses returns ``t-window+1..t``; rows before ``first_valid`` are warmup."""

    dates: np.ndarray
    mu: np.ndarray      # (T, n)
    sigma: np.ndarray   # (T, n, n)
    first_valid: int

    def valid(self, t: int) -> bool:
        return t >= self.first_valid


def rolling_estimates(returns: ReturnTable, window: int = 50) -> RollingEstimates:
    """Equal-weight rolling mean and sample covariance (divisor ``window-1``)."""
    if window < 2:
        raise ConfigError("estimation window must be >= 2")
    r = returns.returns
    T, n = r.shape
    mu = np.full((T, n), np.nan)
    sigma = np.full((T, n, n), np.nan)
    if T >= window:
        win = sliding_window_view(r, window, axis=0)  # (T-w+1, n, w)
        m = win.mean(axis=2)
        dev = win - m[:, :, None]
        cov = np.einsum("tiw,tjw->tij", dev, dev) / (window - 1)
        mu[window - 1:] = m
        sigma[window - 1:] = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return RollingEstimates(returns.dates, mu, sigma, window - 1)


@dataclass(frozen=True)
class SimplexSolverConfig:
    iterations: int = 500
    restarts: int = 10
    seed: int = 0
    ridge: float = 1e-8


@dataclass(frozen=True)
class SimplexSolution:
    weights: np.ndarray
    objective: float
    fallback: bool = False


def project_simplex(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``V`` onto the probability simplex."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.count_nonzero(U - css / ind > 0, axis=1)
    theta = css[np.arange(V.shape[0]), rho - 1] / rho
    return np.maximum(V - theta[:, None], 0.0)


def _ridge(sigma: np.ndarray, eps: float) -> np.ndarray:
    n = sigma.shape[0]
    return sigma + eps * max(np.trace(sigma), 0.0) / n * np.eye(n)


def ratio_objective(a: np.ndarray, sigma: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``a.w / sqrt(w' sigma w)`` for each row of ``W``."""
    W = np.atleast_2d(W)
    var = np.einsum("ri,ij,rj->r", W, sigma, W)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (W @ a) / np.sqrt(var)


def _starts(n: int, cfg: SimplexSolverConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    W = rng.dirichlet(np.ones(n), size=max(cfg.restarts, 1))
    W[0] = 1.0 / n
    return W


def _maximize_ratio(a: np.ndarray, sigma: np.ndarray, cfg: SimplexSolverConfig) -> SimplexSolution:
    """Projected gradient ascent with per-restart step adaptation.

    A step is kept only when it does not lower the objective; the step
    length grows after accepted steps and halves after rejected ones.
    """
    n = a.size
    W = _starts(n, cfg)
    f = ratio_objective(a, sigma, W)
    eta = np.full(W.shape[0], 0.1)
    for _ in range(cfg.iterations):
        Sw = W @ sigma
        var = np.einsum("ri,ri->r", W, Sw)
        s = np.sqrt(var)
        num = W @ a
        grad = a[None, :] / s[:, None] - (num / s ** 3)[:, None] * Sw
        gnorm = np.linalg.norm(grad, axis=1)
        step = eta / np.where(gnorm > 0, gnorm, 1.0)
        cand = project_simplex(W + step[:, None] * grad)
        fc = ratio_objective(a, sigma, cand)
        ok = fc >= f
        W = np.where(ok[:, None], cand, W)
        f = np.where(ok, fc, f)
        eta = np.where(ok, np.minimum(eta * 1.5, 1.0), eta * 0.5)
        eta = np.maximum(eta, 1e-14)
    best = int(np.argmax(f))
    return SimplexSolution(W[best], float(f[best]))


def min_variance_weights(sigma: np.ndarray, iterations: int = 500) -> np.ndarray:
    n = sigma.shape[0]
    w = np.full(n, 1.0 / n)
    lip = 2.0 * max(float(np.linalg.eigvalsh(sigma).max()), 1e-300)
    for _ in range(iterations):
        w = project_simplex(w - (2.0 * sigma @ w) / lip)[0]
    return w


def max_sharpe_weights(mu, sigma, solver: SimplexSolverConfig = SimplexSolverConfig()) -> SimplexSolution:
    """Long-only tangency portfolio; minimum variance when no mean is positive."""
    mu = np.asarray(mu, dtype=np.float64)
    S = _ridge(np.asarray(sigma, dtype=np.float64), solver.ridge)
    if np.all(mu <= 0):
        w = min_variance_weights(S, solver.iterations)
        return SimplexSolution(w, float(ratio_objective(mu, S, w)[0]), fallback=True)
    return _maximize_ratio(mu, S, solver)


def max_diversification_weights(sigma, solver: SimplexSolverConfig = SimplexSolverConfig()) -> SimplexSolution:
    """Maximize ``sum_i w_i sigma_i / sqrt(w' Sigma w)`` over the simplex."""
    sigma = np.asarray(sigma, dtype=np.float64)
    vols = np.sqrt(np.clip(np.diag(sigma), 0.0, None))
    S = _ridge(sigma, solver.ridge)
    if np.all(vols <= 0):
        w = min_variance_weights(S, solver.iterations)
        return SimplexSolution(w, float("nan"), fallback=True)
    return _maximize_ratio(vols, S, solver)


def _estimate_path(returns, window, start, end, solve) -> WeightPath:
    est = rolling_estimates(returns, window)
    idx = np.flatnonzero(_range_mask(returns.dates, start, end))
    idx = idx[idx >= est.first_valid]
    if idx.size == 0:
        raise InsufficientDataError("no dates with a full estimation window in range")
    out = np.empty((idx.size, returns.n_assets))
    fallbacks = 0
    for j, t in enumerate(idx):
        sol = solve(est.mu[t], est.sigma[t])
        out[j] = sol.weights
        fallbacks += sol.fallback
    flags = (f"fallback_days={fallbacks}",) if fallbacks else ()
    return WeightPath(returns.dates[idx], out, returns.asset_names, flags)


def mean_variance_path(returns, window=50, solver=SimplexSolverConfig(), start=None, end=None) -> WeightPath:
    return _estimate_path(returns, window, start, end, lambda m, s: max_sharpe_weights(m, s, solver))


def max_diversification_path(returns, window=50, solver=SimplexSolverConfig(), start=None, end=None) -> WeightPath:
    return _estimate_path(returns, window, start, end, lambda m, s: max_diversification_weights(s, solver))


def diversity_weights(prices_row: np.ndarray, p: float) -> np.ndarray:
    pi = prices_row / prices_row.sum(axis=-1, keepdims=True)
    # work in logs so tiny exponents keep full precision
    logw = p * np.log(pi)
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def diversity_weighted_path(prices: PriceTable, p: float = 0.5, start=None, end=None) -> WeightPath:
    """Weights proportional to price-share pseudo market weights raised to ``p``."""
    if not 0.0 < p <= 1.0:
        raise ConfigError("DWP exponent must lie in (0, 1]")
    keep = _range_mask(prices.dates, start, end)
    if not keep.any():
        raise InsufficientDataError("DWP path: empty date range")
    if p == 1.0:
        c = prices.closes[keep]
        w = c / c.sum(axis=1, keepdims=True)
    else:
        w = diversity_weights(prices.closes[keep], p)
    return WeightPath(prices.dates[keep], w, prices.asset_names)


@dataclass(frozen=True)
class BaselineConfig:
    allocations: dict = field(default_factory=lambda: dict(DEFAULT_ALLOCATIONS))
    estimate_window: int = 50
    dwp_exponent: float = 0.5
    solver: SimplexSolverConfig = SimplexSolverConfig()


BaselineFn = Callable[[PriceTable, ReturnTable, object, object, BaselineConfig], WeightPath]


def _alloc(name) -> BaselineFn:
    def build(prices, returns, start, end, cfg):
        if name not in cfg.allocations:
            raise ConfigError(f"no allocation configured for {name}")
        return fixed_allocation_path(returns, cfg.allocations[name], start, end)
    return build


BASELINES: dict[str, BaselineFn] = {
    **{name: _alloc(name) for name in DEFAULT_ALLOCATIONS},
    "mv": lambda p, r, s, e, c: mean_variance_path(r, c.estimate_window, c.solver, s, e),
    "md": lambda p, r, s, e, c: max_diversification_path(r, c.estimate_window, c.solver, s, e),
    "dwp": lambda p, r, s, e, c: diversity_weighted_path(p, c.dwp_exponent, s, e),
}
