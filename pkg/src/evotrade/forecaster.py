"""EMA return features, multi-horizon ridge alpha model and forecast scoring."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.stats import rankdata

from .market_data import BarSeries

log = logging.getLogger(__name__)

HORIZONS = (1, 10, 100, 1000)
PRIMARY_HORIZON = 10
DEFAULT_SPANS = (1, 5, 10)


@dataclass
class FeatureMatrix:
    timestamps: np.ndarray
    names: list[str]
    values: np.ndarray  # rows x columns

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.timestamps), len(self.names))

    def __len__(self) -> int:
        return len(self.timestamps)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(self.timestamps, list(names), self.values[:, idx])


def ewm_mean(x: np.ndarray, alpha: float) -> np.ndarray:
    """Bias-corrected exponentially weighted mean (weights ``(1-alpha)**age``).

    Leading NaNs are skipped; the result is NaN until the first observation.
    """
    x = np.asarray(x, dtype=float)
    out = np.full(len(x), np.nan)
    finite = np.isfinite(x)
    if not finite.any():
        return out
    start = int(np.argmax(finite))
    seg = np.where(finite[start:], x[start:], 0.0)
    w = finite[start:].astype(float)
    decay = 1.0 - alpha
    num = lfilter([1.0], [1.0, -decay], seg)
    den = lfilter([1.0], [1.0, -decay], w)
    out[start:] = num / den
    return out


def pct_returns(close: np.ndarray, lag: int = 1, log_returns: bool = False) -> np.ndarray:
    out = np.full(len(close), np.nan)
    if lag < len(close):
        ratio = close[lag:] / close[:-lag]
        out[lag:] = np.log(ratio) if log_returns else ratio - 1.0
    return out


def forward_returns(close: np.ndarray, horizon: int, log_returns: bool = False) -> np.ndarray:
    """Return from row t to row t+horizon, aligned to row t; zero where unavailable."""
    out = np.zeros(len(close))
    if horizon < len(close):
        ratio = close[horizon:] / close[:-horizon]
        out[:-horizon] = np.log(ratio) if log_returns else ratio - 1.0
    return out


def default_calcset(series: BarSeries, spans: Sequence[float] = DEFAULT_SPANS,
                    mode: str = "span") -> FeatureMatrix:
    """EMA of one-step close-to-close percent returns, one column per span.

    ``mode="halflife"`` reads ``spans`` as halflives instead
    (``alpha = 1 - 2**(-1/h)``). Missing values become 0.
    """
    if len(series) < 2:
        raise ValueError("need at least two bars")
    rets = pct_returns(series.close)
    cols, names = [], []
    for s in spans:
        if mode == "span":
            a = 2.0 / (s + 1.0)
            names.append(f"ema_ret_{s:g}")
        elif mode == "halflife":
            a = 1.0 - 0.5 ** (1.0 / s)
            names.append(f"ema_ret_hl{s:g}")
        else:
            raise ValueError(f"unknown EMA mode {mode!r}")
        cols.append(ewm_mean(rets, a))
    values = np.nan_to_num(np.column_stack(cols), nan=0.0)
    return FeatureMatrix(series.timestamp.copy(), names, values)


def target_matrix(series: BarSeries, horizons: Sequence[int] = HORIZONS,
                  log_returns: bool = False) -> np.ndarray:
    return np.column_stack([forward_returns(series.close, h, log_returns) for h in horizons])


@dataclass
class RidgeModel:
    weights: np.ndarray  # features x horizons
    ridge_lambda: float = 0.5
    horizons: tuple = HORIZONS
    feature_names: list = field(default_factory=list)
    alpha_sd: float = math.nan
    fitted: bool = True

    def to_json(self) -> str:
        return json.dumps({
            "weights": self.weights.tolist(),
            "lambda": self.ridge_lambda,
            "horizons": list(self.horizons),
            "alpha_sd": self.alpha_sd,
            "feature_names": list(self.feature_names),
        })

    @classmethod
    def from_json(cls, text: str) -> "RidgeModel":
        d = json.loads(text)
        return cls(np.array(d["weights"], dtype=float), d["lambda"], tuple(d["horizons"]),
                   list(d["feature_names"]), d["alpha_sd"])

    @property
    def primary_index(self) -> int:
        return list(self.horizons).index(PRIMARY_HORIZON) if PRIMARY_HORIZON in self.horizons else 0


def solve_ridge(X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(X'X + lam I) W = X'Y`` with no intercept."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    A = X.T @ X + lam * np.eye(X.shape[1])
    B = X.T @ Y
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"ridge system is singular (lambda={lam})") from exc


def fit_ridge(X: FeatureMatrix, series: BarSeries, ridge_lambda: float = 0.5,
              horizons: Sequence[int] = HORIZONS, log_returns: bool = False) -> RidgeModel:
    if len(X) != len(series):
        raise ValueError("feature matrix and series are not aligned")
    Y = target_matrix(series, horizons, log_returns)
    W = solve_ridge(X.values, Y, ridge_lambda)
    model = RidgeModel(W, ridge_lambda, tuple(horizons), list(X.names))
    fitted = X.values @ W
    model.alpha_sd = float(np.std(fitted[:, model.primary_index]))
    return model


@dataclass
class AlphaSeries:
    timestamps: np.ndarray
    alpha: np.ndarray  # rows x horizons
    alpha_sd: float
    horizons: tuple = HORIZONS

    @property
    def primary(self) -> np.ndarray:
        h = list(self.horizons)
        return self.alpha[:, h.index(PRIMARY_HORIZON) if PRIMARY_HORIZON in h else 0]


def predict_alpha(model: RidgeModel, X: FeatureMatrix) -> AlphaSeries:
    """Alpha at every horizon; ``alpha_sd`` stays the one frozen at fit time."""
    if not model.fitted:
        raise RuntimeError("model is not fitted")
    if model.feature_names and list(X.names) != list(model.feature_names):
        raise ValueError(f"feature columns {X.names} do not match model {model.feature_names}")
    if X.values.shape[1] != model.weights.shape[0]:
        raise ValueError("feature count does not match model weights")
    return AlphaSeries(X.timestamps, X.values @ model.weights, model.alpha_sd, model.horizons)


class Forecaster:
    """Calcset + ridge model; ``predict(series)`` feeds the simulator."""

    def __init__(self, model: RidgeModel, spans=DEFAULT_SPANS, mode: str = "span"):
        self.model = model
        self.spans = tuple(spans)
        self.mode = mode

    @classmethod
    def train(cls, series: BarSeries, ridge_lambda: float = 0.5, horizons=HORIZONS,
              spans=DEFAULT_SPANS, mode: str = "span", log_returns: bool = False) -> "Forecaster":
        X = default_calcset(series, spans, mode)
        return cls(fit_ridge(X, series, ridge_lambda, horizons, log_returns), spans, mode)

    def features(self, series: BarSeries) -> FeatureMatrix:
        return default_calcset(series, self.spans, self.mode)

    def predict(self, series: BarSeries) -> AlphaSeries:
        return predict_alpha(self.model, self.features(series))


# ---------------------------------------------------------------------------
# Scoring

@dataclass
class ForecastMetrics:
    r2: float
    ic_mean: float
    icir: float
    combined: float
    n_days: int = 0
    daily_ic: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"r2": self.r2, "ic_mean": self.ic_mean, "icir": self.icir,
                "combined": self.combined, "n_days": self.n_days, "flags": list(self.flags)}


def _clamp(x: float, lo: float, hi: float) -> float:
    if math.isnan(x):
        return 0.0
    return min(max(x, lo), hi)


def combined_score(r2: float, ic: float, icir: float) -> float:
    return 0.4 * _clamp(r2, -1, 1) + 0.3 * _clamp(ic, -1, 1) + 0.3 * _clamp(icir, -5, 5) / 5


def r2_no_intercept(pred, realized) -> float:
    pred = np.asarray(pred, dtype=float)
    realized = np.asarray(realized, dtype=float)
    denom = float(np.sum(realized ** 2))
    if denom == 0:
        return 0.0
    return 1.0 - float(np.sum((realized - pred) ** 2)) / denom


def spearman(a, b) -> float:
    """Average-rank Spearman correlation; 0 when either side is constant."""
    ra, rb = rankdata(a), rankdata(b)
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = math.sqrt(float(np.dot(ra, ra)) * float(np.dot(rb, rb)))
    if denom == 0:
        return 0.0
    return float(np.dot(ra, rb)) / denom


def score_forecast(pred, realized, day_index) -> ForecastMetrics:
    """R^2 (no intercept), mean daily Spearman IC, ICIR and the composite score.

    ``pred`` and ``realized`` are aligned primary-horizon predictions and
    forward returns; ``day_index`` labels each row with its day.
    """
    pred = np.asarray(getattr(pred, "primary", pred), dtype=float)
    realized = np.asarray(realized, dtype=float)
    days = np.asarray(day_index)
    if not (len(pred) == len(realized) == len(days)):
        raise ValueError("pred, realized and day_index must be aligned")
    r2 = r2_no_intercept(pred, realized)

    order = np.argsort(days, kind="stable")
    d_sorted = days[order]
    cuts = np.flatnonzero(d_sorted[1:] != d_sorted[:-1]) + 1
    daily = [spearman(pred[idx], realized[idx]) for idx in np.split(order, cuts) if len(idx) > 1]
    flags = []
    ic_mean = float(np.mean(daily)) if daily else 0.0
    if len(daily) < 2:
        icir = 0.0
        flags.append("icir undefined: fewer than 2 days")
    else:
        sd = float(np.std(daily, ddof=1))
        if sd > 0:
            icir = ic_mean / sd
        else:
            icir = math.copysign(math.inf, ic_mean) if ic_mean != 0 else 0.0
            flags.append("zero dispersion of daily IC")
    return ForecastMetrics(r2, ic_mean, icir, combined_score(r2, ic_mean, icir),
                           len(daily), daily, flags)


def day_labels(timestamps) -> np.ndarray:
    """UTC day number for epoch-minute timestamps."""
    return np.asarray(timestamps, dtype=np.int64) // 1440


# ---------------------------------------------------------------------------
# Feature selection

def _pearson_abs(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if denom == 0:
        return 0.0
    return abs(float(np.dot(a, b))) / denom


def greedy_select(candidates: FeatureMatrix, target, max_k: int = 10,
                  corr_cap: float = 0.85) -> list[str]:
    """Rank by |corr| with the target, then accept greedily under a pairwise cap.

    A candidate is rejected when its |corr| with any already-accepted column
    is >= ``corr_cap``. Ties in the ranking keep column order.
    """
    target = np.asarray(target, dtype=float)
    X = candidates.values
    scores = [_pearson_abs(X[:, j], target) for j in range(X.shape[1])]
    order = sorted(range(X.shape[1]), key=lambda j: -scores[j])
    chosen: list[int] = []
    for j in order:
        if len(chosen) >= max_k:
            break
        if np.ptp(X[:, j]) == 0:
            continue
        if all(_pearson_abs(X[:, j], X[:, c]) < corr_cap for c in chosen):
            chosen.append(j)
    return [candidates.names[j] for j in chosen]
