"""Performance metrics and multiple-testing checks on backtest results.

Sharpe is a dollar-PnL ratio: ``mean(daily pnl_adj) / std(daily pnl_adj) *
sqrt(365)`` with the sample (ddof=1) standard deviation, because crypto
trades every calendar day. Ratio metrics are computed on the daily series
divided by its largest absolute value, so a series multiplied by any k > 0
that is exact in floating point gives bit-identical ratios.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .simulator import Ledger

log = logging.getLogger(__name__)

ANNUALIZATION_DAYS = 365
MINUTES_PER_DAY = 1440
REPORT_SCHEMA_VERSION = "1.0"


@dataclass
class DailyPnlSeries:
    days: np.ndarray  # UTC day numbers since epoch
    pnl_adj: np.ndarray
    pnl_net: np.ndarray
    frictionless: np.ndarray  # mark-to-market on held inventory only
    volume: np.ndarray  # traded USD
    impact: np.ndarray

    def __post_init__(self):
        self.days = np.asarray(self.days, dtype=np.int64)
        for name in ("pnl_adj", "pnl_net", "frictionless", "volume", "impact"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if len(self.days) > 1 and np.any(np.diff(self.days) <= 0):
            raise ValueError("day labels must be unique and increasing")

    def __len__(self) -> int:
        return len(self.days)

    @classmethod
    def from_ledger(cls, ledger: Ledger) -> "DailyPnlSeries":
        c = ledger.columns
        day = np.asarray(c["timestamp"], dtype=np.int64) // MINUTES_PER_DAY
        days, inv = np.unique(day, return_inverse=True)
        fills = np.where(c["fill_qty"] != 0, np.abs(c["fill_qty"] * np.nan_to_num(c["fill_price"])), 0.0)

        def by_day(x):
            return np.bincount(inv, weights=x, minlength=len(days))

        return cls(days, by_day(c["pnl_adj"]), by_day(c["pnl_net"]), by_day(c["pnl_pos"]),
                   by_day(fills), by_day(c["impact_cost"]))

    @classmethod
    def from_values(cls, pnl_adj: Sequence[float]) -> "DailyPnlSeries":
        x = np.asarray(pnl_adj, dtype=float)
        z = np.zeros(len(x))
        return cls(np.arange(len(x)), x, x.copy(), x.copy(), z, z.copy())


@dataclass
class PerfMetrics:
    sharpe: float
    sortino: float
    calmar: float
    max_drawdown: float
    win_rate: float
    total_pnl_adj: float
    total_pnl_net: float
    total_volume: float
    impact_bps: float
    n_days: int
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: _json_float(v) if isinstance(v, float) else v for k, v in asdict(self).items()}


def _json_float(v: float):
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def max_drawdown(cumulative: Sequence[float]) -> float:
    """Most negative gap between the path and its running maximum (<= 0)."""
    c = np.asarray(cumulative, dtype=float)
    if len(c) == 0:
        return 0.0
    return float(min(0.0, np.min(c - np.maximum.accumulate(c))))


def _ratio(num: float, den: float, what: str, flags: list) -> float:
    if den > 0:
        return num / den
    flags.append(f"{what} undefined: zero denominator")
    (log.warning if what == "sharpe" else log.debug)("%s undefined: zero denominator", what)
    return math.copysign(math.inf, num) if num != 0 else 0.0


def perf_metrics(daily: DailyPnlSeries, annualization_days: int = ANNUALIZATION_DAYS) -> PerfMetrics:
    if len(daily) < 2:
        raise ValueError("performance metrics need at least two days")
    x = daily.pnl_adj
    flags: list = []
    scale = float(np.max(np.abs(x)))
    xn = x / scale if scale > 0 else x
    mean = float(np.mean(xn))
    root = math.sqrt(annualization_days)
    sharpe = _ratio(mean, float(np.std(xn, ddof=1)), "sharpe", flags) * root
    downside = math.sqrt(float(np.mean(np.minimum(xn, 0.0) ** 2)))
    sortino = _ratio(mean, downside, "sortino", flags) * root
    dd_n = max_drawdown(np.concatenate([[0.0], np.cumsum(xn)]))
    calmar = _ratio(mean * annualization_days, abs(dd_n), "calmar", flags)
    volume = float(np.sum(daily.volume))
    impact = float(np.sum(daily.impact))
    return PerfMetrics(
        sharpe=sharpe,
        sortino=sortino,
        calmar=calmar,
        max_drawdown=max_drawdown(np.concatenate([[0.0], np.cumsum(x)])),
        win_rate=float(np.mean(x > 0)),
        total_pnl_adj=float(np.sum(x)),
        total_pnl_net=float(np.sum(daily.pnl_net)),
        total_volume=volume,
        impact_bps=impact / volume * 1e4 if volume > 0 else 0.0,
        n_days=len(daily),
        flags=flags,
    )


def trade_win_rate(ledger: Ledger) -> float:
    """Fraction of fills priced better than the next bar's close."""
    c = ledger.columns
    mask = c["fill_qty"] != 0
    if not mask.any():
        return 0.0
    edge = c["fill_qty"][mask] * (c["mid"][mask] + c["mid_move"][mask] - c["fill_price"][mask])
    return float(np.mean(edge > 0))


# ---------------------------------------------------------------------------
# Sizing counterfactual

def sizing_counterfactual(F_b: float, I_b: float, k: float) -> float:
    """PnL of the baseline scaled k-fold: fees and spread scale linearly, impact as k**1.5."""
    if not k > 0:
        raise ValueError("k must be positive")
    if I_b < 0:
        raise ValueError("baseline impact cost must be non-negative")
    return k * F_b - k ** 1.5 * I_b


@dataclass
class SizingDecomposition:
    F_b: float
    I_b: float
    k: float
    counterfactual: float
    evolved_pnl_adj: float
    ratio: float

    def to_dict(self) -> dict:
        return {k: _json_float(v) for k, v in asdict(self).items()}


def sizing_decomposition(baseline: DailyPnlSeries, evolved: DailyPnlSeries) -> SizingDecomposition:
    """Compare an evolved strategy with the baseline scaled to the same traded volume."""
    F_b = float(np.sum(baseline.pnl_net))
    I_b = max(float(np.sum(baseline.impact)), 0.0)
    vb = float(np.sum(baseline.volume))
    k = float(np.sum(evolved.volume)) / vb if vb > 0 else math.nan
    cf = sizing_counterfactual(F_b, I_b, k) if k > 0 else math.nan
    ev = float(np.sum(evolved.pnl_adj))
    ratio = ev / cf if cf and math.isfinite(cf) else math.nan
    return SizingDecomposition(F_b, I_b, k, cf, ev, ratio)


# ---------------------------------------------------------------------------
# Best-of-K null model

@dataclass(frozen=True)
class NullModel:
    """Gaussian null for the best of K trials around a baseline PnL."""
    pnl0: float
    sigma0: float
    window_days: float
    s0: Optional[float] = None

    @classmethod
    def from_baseline(cls, pnl0: float, s0: float, window_days: float) -> "NullModel":
        """sigma0 = pnl0 / s0: the PnL standard deviation implied by the baseline Sharpe."""
        if not s0 > 0:
            raise ValueError("baseline Sharpe must be positive to calibrate sigma0")
        return cls(pnl0, pnl0 / s0, window_days, s0)

    def rescaled(self, window_days: float, pnl0: Optional[float] = None) -> "NullModel":
        """Move to a window of a different length; sigma scales with sqrt(days)."""
        sigma = self.sigma0 * math.sqrt(window_days / self.window_days)
        return NullModel(self.pnl0 if pnl0 is None else pnl0, sigma, window_days, self.s0)

    def to_dict(self) -> dict:
        return asdict(self)


def phacking_ceiling(null: NullModel, K: int, window_days: Optional[float] = None) -> float:
    """Expected best of K independent trials: pnl0 + sigma0 * sqrt(2 ln K)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if window_days is not None:
        null = null.rescaled(window_days)
    return null.pnl0 + null.sigma0 * math.sqrt(2.0 * math.log(K))


def z_excess(observed: float, null: NullModel, window_days: Optional[float] = None,
             pnl0: Optional[float] = None) -> float:
    """(observed - pnl0) / sigma0, after optionally moving the null to another window."""
    if window_days is not None or pnl0 is not None:
        null = null.rescaled(window_days if window_days is not None else null.window_days, pnl0)
    if not null.sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    return (observed - null.pnl0) / null.sigma0


# ---------------------------------------------------------------------------
# In-sample / out-of-sample curves

@dataclass
class IsOosCurve:
    n: list  # 1-based candidate count
    is_best: list
    oos_of_champion: list
    champion_id: list
    change_points: list  # values of n where the champion changed
    degradation: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def is_oos_curve(record) -> IsOosCurve:
    """Best IS score among the first n candidates and the OOS score of its holder.

    ``record`` is a RunRecord or a sequence of ``(is_fitness, oos_fitness)``
    pairs (None marks a failed evaluation). The champion only changes on a
    strict IS improvement.
    """
    if hasattr(record, "candidates"):
        pairs = [(c.id, c.fitness, record.oos.get(c.id)) for c in record.candidates]
    else:
        pairs = [(i, a, b) for i, (a, b) in enumerate(record)]
    out = IsOosCurve([], [], [], [], [], None)
    best = champ = champ_oos = None
    for n, (cid, f, o) in enumerate(pairs, start=1):
        if f is not None and math.isfinite(f) and (best is None or f > best):
            best, champ, champ_oos = f, cid, o
            out.change_points.append(n)
        out.n.append(n)
        out.is_best.append(best)
        out.oos_of_champion.append(champ_oos)
        out.champion_id.append(champ)
    if best not in (None, 0) and champ_oos is not None:
        out.degradation = champ_oos / best
    return out


# ---------------------------------------------------------------------------
# Report

def split_report(ledger: Ledger) -> dict:
    daily = DailyPnlSeries.from_ledger(ledger)
    if len(daily) >= 2:
        block = perf_metrics(daily).to_dict()
    else:
        volume, impact = float(np.sum(daily.volume)), float(np.sum(daily.impact))
        block = {"sharpe": None, "sortino": None, "calmar": None,
                 "max_drawdown": max_drawdown(np.concatenate([[0.0], np.cumsum(daily.pnl_adj)])),
                 "win_rate": float(np.mean(daily.pnl_adj > 0)) if len(daily) else 0.0,
                 "total_pnl_adj": float(np.sum(daily.pnl_adj)), "total_pnl_net": float(np.sum(daily.pnl_net)),
                 "total_volume": volume, "impact_bps": impact / volume * 1e4 if volume > 0 else 0.0,
                 "n_days": len(daily), "flags": ["ratio metrics need at least two days"]}
    block["trade_win_rate"] = trade_win_rate(ledger)
    block["n_trades"] = ledger.n_trades
    block["daily"] = {"day": daily.days.tolist(), "pnl_adj": daily.pnl_adj.tolist()}
    return block


def null_block(null: NullModel, K: int, observed: Optional[float], window_days=None, pnl0=None) -> dict:
    n = null.rescaled(window_days if window_days is not None else null.window_days, pnl0)
    return {
        "pnl0": n.pnl0, "s0": n.s0, "sigma0": n.sigma0, "window_days": n.window_days, "K": K,
        "ceiling": phacking_ceiling(n, max(K, 1)),
        "observed": observed,
        "z": z_excess(observed, n) if observed is not None and n.sigma0 > 0 else None,
    }


def analysis_report(splits: Optional[dict] = None, sizing: Optional[SizingDecomposition] = None,
                    null: Optional[dict] = None, record=None, extra: Optional[dict] = None) -> dict:
    """Assemble the JSON analysis report from whichever parts are available."""
    from .evolution import mutator_stats

    rep: dict = {"schema_version": REPORT_SCHEMA_VERSION,
                 "conventions": {"sharpe": "mean(daily pnl_adj)/std(daily pnl_adj, ddof=1)*sqrt(365)",
                                 "win_rate": "fraction of days with pnl_adj > 0"}}
    if splits:
        rep["splits"] = splits
    if sizing is not None:
        rep["sizing"] = sizing.to_dict()
    if null:
        rep["null_model"] = null
    if record is not None:
        rep["is_oos"] = is_oos_curve(record).to_dict()
        rep["cumulative_best"] = record.cumulative_best()
        rep["mutators"] = mutator_stats(record)
    if extra:
        rep.update(extra)
    return rep
