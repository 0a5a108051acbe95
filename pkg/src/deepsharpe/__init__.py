"""Long-only portfolio weights learned by gradient ascent on the Sharpe ratio.

A single-layer LSTM maps a window of recent prices and returns to softmax
portfolio weights and is trained directly on the batch Sharpe ratio. The
package also ships the classical comparison strategies, a volatility-scaled
backtester with linear costs, the usual performance metrics, input
sensitivities and a synthetic market generator.
"""

__version__ = "0.1.0"
