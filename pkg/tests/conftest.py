import numpy as np
import pytest

from deepsharpe.market_data import PriceTable

_ACCEPTANCE = []


def record_criterion(number, name, passed, detail=""):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}"
    if detail:
        line += f" ({detail})"
    _ACCEPTANCE.append(line)
    print(line)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def central_difference(f, x, h=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor_fraction=1e-3):
    """Entry-wise relative error; the denominator is floored at a fraction of
    the largest gradient entry so near-zero entries do not dominate."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    floor = floor_fraction * max(np.max(np.abs(n)), 1e-300)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def make_prices(closes, start="2020-01-01", names=None):
    closes = np.asarray(closes, dtype=float)
    if closes.ndim == 1:
        closes = closes[:, None]
    dates = np.datetime64(start, "D") + np.arange(closes.shape[0])
    names = names or tuple(f"A{i}" for i in range(closes.shape[1]))
    return PriceTable(dates, closes, names)
