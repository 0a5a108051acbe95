import math

import numpy as np
import pytest

from deepsharpe.errors import ConfigError
from deepsharpe.market_data import compute_returns
from deepsharpe.synthetic import SyntheticSpec, business_days, generate, planted_signal_spec


def test_zero_drift_zero_vol_is_flat():
    t = generate(SyntheticSpec(2, 50, drift=0.0, volatility=0.0))
    assert np.all(t.closes == 100.0)


def test_log_return_mean_within_three_standard_errors():
    mu, sigma = 0.08, 0.25
    t = generate(SyntheticSpec(1, 100_001, drift=mu, volatility=sigma, seed=1))
    lr = np.diff(np.log(t.closes[:, 0]))
    se = sigma / math.sqrt(252) / math.sqrt(lr.size)
    assert abs(lr.mean() - (mu - sigma ** 2 / 2) / 252) < 3 * se


def test_correlation_is_reproduced():
    corr = [[1.0, 0.9], [0.9, 1.0]]
    t = generate(SyntheticSpec(2, 50_001, drift=0.0, volatility=[0.1, 0.3], correlation=corr, seed=2))
    r = compute_returns(t).returns
    assert abs(np.corrcoef(r.T)[0, 1] - 0.9) < 0.02


def test_planted_signal_drift_and_realized_sharpe():
    spec = planted_signal_spec(2, 2.0, volatility=0.1)
    assert spec.drift == (0.0, 0.0, 0.2, 0.0)
    r = compute_returns(generate(spec)).returns[:, 2]
    realized = r.mean() / r.std() * math.sqrt(252)
    assert abs(realized - 2.0) < 0.5


def test_planted_signal_preconditions():
    with pytest.raises(ConfigError):
        planted_signal_spec(4, 2.0, n_assets=4)
    with pytest.raises(ConfigError):
        planted_signal_spec(0, 0.0)
    with pytest.raises(ConfigError):
        planted_signal_spec(0, 4.5)


def test_deterministic_and_positive():
    spec = SyntheticSpec(3, 500, drift=[0.1, -0.3, 0.0], volatility=[0.2, 0.9, 0.05], seed=5)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.closes, b.closes) and np.array_equal(a.dates, b.dates)
    assert np.all(a.closes > 0)
    assert not np.array_equal(a.closes, generate(SyntheticSpec(3, 500, [0.1, -0.3, 0.0], [0.2, 0.9, 0.05], seed=6)).closes)


@pytest.mark.parametrize(
    "corr",
    [
        [[1.0, 0.5], [0.4, 1.0]],   # asymmetric
        [[2.0, 0.0], [0.0, 1.0]],   # diagonal not one
        [[1.0, 1.5], [1.5, 1.0]],   # not PSD
    ],
)
def test_bad_correlation(corr):
    with pytest.raises(ConfigError):
        SyntheticSpec(2, 10, 0.0, 0.1, correlation=corr)


def test_business_days_skip_weekends():
    d = business_days("2021-01-02", 5)  # a Saturday
    assert str(d[0]) == "2021-01-04"
    assert np.all(np.is_busday(d))
    assert np.all(np.diff(d).astype(int) > 0)
