"""Price ingestion, simple returns, ex-ante volatility and walk-forward splits.

Dates are held as ``numpy.datetime64[D]`` arrays and every table is an
immutable dataclass whose arrays are flagged read-only.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    InsufficientDataError,
    IOFailure,
    ParseError,
)

TRADING_DAYS = 252


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def as_date(value) -> np.datetime64:
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, (dt.date, str)):
        return np.datetime64(value, "D")
    raise TypeError(f"cannot interpret {value!r} as a date")


@dataclass(frozen=True)
class PriceTable:
    dates: np.ndarray
    closes: np.ndarray
    asset_names: tuple

    def __post_init__(self):
        dates = _frozen(self.dates, "datetime64[D]")
        closes = _frozen(self.closes, np.float64)
        if closes.ndim != 2 or closes.shape[0] != dates.shape[0]:
            raise DataError(f"closes shape {closes.shape} does not match {dates.shape[0]} dates")
        if closes.shape[1] != len(self.asset_names):
            raise DataError("asset_names length does not match closes columns")
        if dates.size > 1 and not np.all(dates[1:] > dates[:-1]):
            raise DataError("dates must be strictly increasing")
        if not np.all(np.isfinite(closes)) or np.any(closes <= 0):
            raise DataError("prices must be strictly positive and finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "asset_names", tuple(self.asset_names))

    @property
    def n_assets(self) -> int:
        return self.closes.shape[1]

    def __len__(self):
        return self.dates.shape[0]

    def truncate(self, last_date) -> "PriceTable":
        """Keep rows dated on or before ``last_date``."""
        keep = self.dates <= as_date(last_date)
        return PriceTable(self.dates[keep], self.closes[keep], self.asset_names)


@dataclass(frozen=True)
class ReturnTable:
    """Simple returns; row ``t`` is the move from close ``t-1`` to close ``t``."""

    dates: np.ndarray
    returns: np.ndarray
    asset_names: tuple

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        object.__setattr__(self, "returns", _frozen(self.returns, np.float64))
        object.__setattr__(self, "asset_names", tuple(self.asset_names))
        if self.returns.shape != (self.dates.shape[0], len(self.asset_names)):
            raise DataError("returns shape does not match dates/assets")

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def __len__(self):
        return self.dates.shape[0]


@dataclass(frozen=True)
class VolEstimateTable:
    """Annualized ex-ante volatility aligned with a ReturnTable.

    Row ``t`` uses returns up to and including ``t``. The first ``warmup``
    rows must not be traded on; ``degenerate`` marks zero-variance entries.
    """

    dates: np.ndarray
    sigma: np.ndarray
    asset_names: tuple
    warmup: int
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(self.dates, "datetime64[D]"))
        object.__setattr__(self, "sigma", _frozen(self.sigma, np.float64))
        object.__setattr__(self, "asset_names", tuple(self.asset_names))
        deg = self.degenerate if self.degenerate is not None else self.sigma <= 0
        object.__setattr__(self, "degenerate", _frozen(deg, bool))

    def in_warmup(self, index: int) -> bool:
        return index < self.warmup


@dataclass(frozen=True)
class WalkForwardSplit:
    """Positional slices into the dates a split was built from.

    ``fit`` and ``validation`` together are all dates strictly before the
    test window; ``validation`` is their chronological tail.
    """

    index: int
    fit: slice
    validation: slice
    test: slice
    dates: np.ndarray = field(repr=False)

    def _range(self, s: slice):
        if s.stop <= s.start:
            return None
        return (self.dates[s.start], self.dates[s.stop - 1])

    @property
    def train_range(self):
        return self._range(self.fit)

    @property
    def validation_range(self):
        return self._range(self.validation)

    @property
    def test_range(self):
        return self._range(self.test)


def _open_text(source) -> IO[str]:
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, "r", encoding="utf-8", newline="")
        except OSError as exc:
            raise IOFailure(f"cannot open {source}: {exc.strerror}") from exc
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _parse_price(text: str, line: int) -> float | None:
    text = text.strip().replace("−", "-")
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"cannot parse price {text!r}", line) from None


def load_prices(source, expected_assets: Sequence[str] | None = None) -> PriceTable:
    """Read a ``date,<asset1>,...`` CSV into a PriceTable.

    ``source`` is a path, a text stream or a byte stream. Rows where any
    selected asset is blank are dropped (inner join across assets).
    """
    stream = _open_text(source)
    owns = isinstance(source, (str, os.PathLike))
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise InsufficientDataError("empty CSV") from None
        header = [h.strip() for h in header]
        if not header or header[0].lower() != "date":
            raise ParseError("header must start with 'date'", 1)
        columns = header[1:]
        if expected_assets is None:
            expected_assets = columns
        missing = [a for a in expected_assets if a not in columns]
        if missing:
            raise DataError(f"missing asset columns: {', '.join(missing)}")
        pick = [columns.index(a) + 1 for a in expected_assets]

        rows = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
            try:
                day = np.datetime64(dt.date.fromisoformat(row[0].strip()), "D")
            except ValueError:
                raise ParseError(f"bad ISO date {row[0]!r}", line_no) from None
            if day in rows:
                raise DataError(f"duplicate date {day}")
            values = [_parse_price(row[j], line_no) for j in pick]
            for name, v in zip(expected_assets, values):
                if v is not None and (not math.isfinite(v) or v <= 0):
                    raise DataError(f"non-positive or non-finite price {v} on {day} for {name}")
            if any(v is None for v in values):
                continue
            rows[day] = values
    finally:
        if owns:
            stream.close()

    if len(rows) < 2:
        raise InsufficientDataError(f"need at least 2 complete rows, got {len(rows)}")
    dates = np.array(sorted(rows), dtype="datetime64[D]")
    closes = np.array([rows[d] for d in dates], dtype=np.float64)
    return PriceTable(dates, closes, tuple(expected_assets))


def compute_returns(prices: PriceTable) -> ReturnTable:
    if len(prices) < 2:
        raise InsufficientDataError("need at least 2 prices to form a return")
    c = prices.closes
    return ReturnTable(prices.dates[1:], c[1:] / c[:-1] - 1.0, prices.asset_names)


def ewm_volatility(
    returns: ReturnTable,
    span_days: int = 50,
    annualization_factor: int = TRADING_DAYS,
) -> VolEstimateTable:
    """Exponentially weighted standard deviation, annualized.

    Weights decay by ``1 - 2/(span_days+1)`` per day and are normalized over
    the observed history, so row ``t`` is a weighted moment of rows ``0..t``.
    """
    if span_days < 2:
        raise ConfigError(f"span_days must be >= 2, got {span_days}")
    decay = 1.0 - 2.0 / (span_days + 1.0)
    r = returns.returns
    T, n = r.shape
    sigma = np.empty((T, n))
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    norm = 0.0
    for t in range(T):
        s1 = decay * s1 + r[t]
        s2 = decay * s2 + r[t] * r[t]
        norm = decay * norm + 1.0
        mean = s1 / norm
        var = s2 / norm - mean * mean
        sigma[t] = np.sqrt(np.maximum(var, 0.0))
    # Constant series leave a sqrt(eps)-sized residue; threshold against the
    # running max |r| so the flag stays causal.
    scale = np.maximum.accumulate(np.abs(r), axis=0) if T else np.zeros((0, n))
    degenerate = sigma <= 1e-7 * scale
    sigma = np.where(degenerate, 0.0, sigma) * math.sqrt(annualization_factor)
    return VolEstimateTable(returns.dates, sigma, returns.asset_names, min(span_days, T), degenerate)


def _add_years(day: np.datetime64, years: int) -> np.datetime64:
    d = day.astype(dt.date)
    try:
        shifted = d.replace(year=d.year + years)
    except ValueError:  # 29 February
        shifted = d.replace(year=d.year + years, day=28)
    return np.datetime64(shifted, "D")


def walk_forward_splits(
    dates: Iterable,
    first_test_start,
    retrain_every_years: int = 2,
    validation_fraction: float = 0.10,
) -> list[WalkForwardSplit]:
    """Expanding-window splits whose test windows tile the period from
    ``first_test_start`` to the last date in blocks of ``retrain_every_years``.
    """
    dates = _frozen(np.asarray(dates, dtype="datetime64[D]"))
    start = as_date(first_test_start)
    if not 0.0 < validation_fraction < 0.5:
        raise ConfigError("validation_fraction must lie in (0, 0.5)")
    if retrain_every_years < 1:
        raise ConfigError("retrain_every_years must be >= 1")
    if dates.size == 0 or not (dates[0] < start <= dates[-1]):
        raise InsufficientDataError(
            f"first test date {start} is not strictly inside the data range"
        )

    splits = []
    lo = start
    while lo <= dates[-1]:
        hi = _add_years(lo, retrain_every_years)
        t0 = int(np.searchsorted(dates, lo, side="left"))
        t1 = int(np.searchsorted(dates, hi, side="left"))
        if t1 > t0:
            n_val = int(round(validation_fraction * t0))
            if t0 - n_val < 1:
                raise InsufficientDataError(f"empty training window before {dates[t0]}")
            v0 = t0 - n_val
            splits.append(
                WalkForwardSplit(len(splits), slice(0, v0), slice(v0, t0), slice(t0, t1), dates)
            )
        lo = hi
    return splits


def dump_table(path, dates, values, columns: Sequence[str]) -> None:
    """Write ``date,<columns...>`` CSV atomically."""
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *columns])
        for d, row in zip(dates, values):
            w.writerow([str(d), *(repr(float(x)) for x in row)])
    os.replace(tmp, path)
