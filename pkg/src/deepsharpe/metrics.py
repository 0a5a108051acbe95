"""Annualized performance metrics of a daily net-return series.

Standard deviations use the population (divide-by-T) estimator, the
downside deviation uses a zero target, and drawdown is measured on
compounded equity starting from 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .market_data import TRADING_DAYS

METRIC_FIELDS = (
    "e_r",
    "std_r",
    "sharpe",
    "dd_r",
    "sortino",
    "mdd",
    "pct_positive",
    "avg_p_over_avg_l",
)
METRIC_HEADERS = ("E(R)", "Std(R)", "Sharpe", "DD(R)", "Sortino", "MDD", "%+Ret", "AveP/AveL")


@dataclass(frozen=True)
class MetricBundle:
    e_r: float
    std_r: float
    sharpe: float
    dd_r: float
    sortino: float
    mdd: float
    pct_positive: float
    avg_p_over_avg_l: float
    flags: tuple = field(default=())

    def values(self) -> tuple:
        return tuple(getattr(self, k) for k in METRIC_FIELDS)

    def to_json(self) -> dict:
        """JSON-safe dict; non-finite values become ``None`` and are listed in flags."""
        out = {k: (v if math.isfinite(v) else None) for k, v in zip(METRIC_FIELDS, self.values())}
        out["flags"] = list(self.flags)
        return out

    @classmethod
    def from_json(cls, d: dict) -> "MetricBundle":
        flags = tuple(d.get("flags", ()))
        vals = {}
        for k in METRIC_FIELDS:
            v = d[k]
            if v is None:
                v = math.inf if f"{k}_infinite" in flags else math.nan
            vals[k] = float(v)
        return cls(**vals, flags=flags)


def max_drawdown(returns) -> float:
    """Largest peak-to-trough fall of ``prod(1+r)`` as a fraction of the peak."""
    equity = np.cumprod(1.0 + np.asarray(returns, dtype=np.float64))
    peak = np.maximum.accumulate(np.concatenate([[1.0], equity]))[1:]
    return float(np.max(1.0 - equity / peak, initial=0.0))


def compute_metrics(net_returns, annualization_factor: int = TRADING_DAYS) -> MetricBundle:
    r = np.asarray(net_returns, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ContractError("metrics need a 1-D series of at least 2 returns")
    flags = []
    ann = float(annualization_factor)
    mean = float(r.mean())
    std = float(r.std())
    e_r = mean * ann
    std_r = std * math.sqrt(ann)
    if std_r > 0:
        sharpe = e_r / std_r
    else:
        sharpe = math.nan
        flags.append("sharpe_undefined")
    neg = r[r < 0]
    pos = r[r > 0]
    dd_r = math.sqrt(ann) * math.sqrt(float(np.mean(np.minimum(r, 0.0) ** 2)))
    if dd_r > 0:
        sortino = e_r / dd_r
    else:
        sortino = math.copysign(math.inf, e_r) if e_r != 0 else math.nan
        flags.append("sortino_infinite" if e_r != 0 else "sortino_undefined")
    if neg.size:
        avg_ratio = (float(pos.mean()) if pos.size else 0.0) / abs(float(neg.mean()))
    else:
        avg_ratio = math.inf if pos.size else math.nan
        flags.append("avg_p_over_avg_l_infinite" if pos.size else "avg_p_over_avg_l_undefined")
    return MetricBundle(
        e_r=e_r,
        std_r=std_r,
        sharpe=sharpe,
        dd_r=dd_r,
        sortino=sortino,
        mdd=max_drawdown(r),
        pct_positive=float(np.mean(r > 0)),
        avg_p_over_avg_l=avg_ratio,
        flags=tuple(flags),
    )


def format_table(rows: list[tuple[str, MetricBundle]], label_width: int = 14) -> str:
    """Fixed-width text table, one strategy per row."""
    head = f"{'':<{label_width}}" + "".join(f"{h:>11}" for h in METRIC_HEADERS)
    lines = [head, "-" * len(head)]
    for name, m in rows:
        cells = []
        for v in m.values():
            cells.append(f"{v:>11.3f}" if math.isfinite(v) else f"{('inf' if v > 0 else '-inf') if math.isinf(v) else 'n/a':>11}")
        lines.append(f"{name:<{label_width}}" + "".join(cells))
    return "\n".join(lines)
