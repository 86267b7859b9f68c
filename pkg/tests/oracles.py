"""Independent reference implementations used as test oracles."""
import math

import numpy as np
import pandas as pd

from evotrade.simulator import PortfolioState, step


def impact_costs(times, notionals, V=2e9, a_perm=0.005, a_trans=0.010, tau0=300.0, beta=0.5, delta=0.5):
    """Per-trade cost by the literal double sum, written from scratch."""
    out = []
    for i, (ti, qi) in enumerate(zip(times, notionals)):
        perm = trans = 0.0
        for tj, qj in zip(times[: i + 1], notionals[: i + 1]):
            s = (1 if qj > 0 else -1 if qj < 0 else 0) * (abs(qj) / V) ** delta
            perm += s
            trans += s * (tau0 / (ti - tj + tau0)) ** beta
        out.append((a_perm * perm + a_trans * trans) * qi)
    return out


def ridge_weights(X, Y, lam):
    """Ridge as ordinary least squares on the row-augmented system."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    p = X.shape[1]
    Xa = np.vstack([X, math.sqrt(lam) * np.eye(p)])
    Ya = np.vstack([Y.reshape(len(X), -1), np.zeros((p, Y.reshape(len(X), -1).shape[1]))])
    return np.linalg.lstsq(Xa, Ya, rcond=None)[0]


def ema_pandas(x, span):
    return pd.Series(x).ewm(span=span, adjust=True).mean().to_numpy()


def step_backtest(series, strategy, alpha, alpha_sd, config):
    """Backtest assembled from the single-interval ``step`` function."""
    rows = []
    q = config.initial_position_btc
    pending = None
    lag = config.data_lag_minutes
    close = series.close
    for t in range(len(series) - 1):
        mid_book = close[t - lag] if t >= lag else close[0]
        state = PortfolioState(q, close[t], mid_book, lag, alpha[t], alpha_sd, int(series.timestamp[t]))
        row, new_state, pending = step(state, series[t], series[t + 1], pending, strategy, config)
        q = new_state.position_btc
        rows.append(row)
    return rows


def top_k(candidates, k):
    ok = [c for c in candidates if c.fitness is not None]
    return sorted(ok, key=lambda c: (-c.fitness, c.id))[:k]
