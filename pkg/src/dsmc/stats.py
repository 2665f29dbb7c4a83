"""Small statistics helpers for chain and replicate diagnostics."""

import numpy as np


def acf(series, max_lag):
    """Autocorrelation with the biased (1/n) normalization; ``acf[0] == 1``."""
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ValueError("need at least two observations")
    x = x - x.mean()
    denom = np.dot(x, x)
    if denom <= 0.0:
        raise ValueError("autocorrelation is undefined for a constant series")
    max_lag = min(int(max_lag), n - 1)
    return np.array([np.dot(x[: n - k], x[k:]) / denom for k in range(max_lag + 1)])


def loglog_slope(xs, ys):
    """Least-squares slope of ``log(ys)`` against ``log(xs)``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])
