"""One-order-at-a-time passive execution over minute bars.

Each interval t (bar t, with bar t+1 supplying the next mid):

1. the resting order is checked against bar t's range,
2. the position absorbs the fill,
3. the order is cancelled,
4. the strategy is asked for a new order,
5. the order is sign-fixed and capped,
6. it rests until the next interval if its limit price is valid,
7. a ledger row is written with ``dm = close[t+1] - close[t]``.

The mid price is the bar close. The last bar of a series produces no row.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from typing import Optional, Protocol

import numpy as np

from .impact import ImpactParams, ImpactReport, TradeLog, charge
from .market_data import Bar, BarSeries

BUY = "B"
SELL = "A"


class StrategyError(RuntimeError):
    """A strategy raised during a backtest; the run is aborted."""

    def __init__(self, timestamp: int, cause: BaseException):
        super().__init__(f"strategy failed at t={timestamp}: {cause!r}")
        self.timestamp = timestamp
        self.cause = cause


@dataclass(slots=True)
class OrderIntent:
    side: Optional[str]
    limit_price: float = math.nan
    qty_btc: float = 0.0
    target_position_btc: float = math.nan
    risk_reduction_mode: bool = False

    @property
    def active(self) -> bool:
        return self.side is not None and self.limit_price > 0 and self.qty_btc != 0


@dataclass(frozen=True, slots=True)
class Fill:
    qty_btc: float
    price: float
    timestamp: int


@dataclass(slots=True)
class PortfolioState:
    position_btc: float
    mid: float
    mid_book: float
    data_lag_minutes: float = 0.0
    alpha: float = 0.0
    alpha_sd: float = 1.0
    timestamp: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}
        d.update(self.extra)
        return d


@dataclass(frozen=True)
class SimConfig:
    hit_ratio: float = 1.0
    fee_rate: float = 0.00015
    max_limit_order_usd: float = 100_000.0
    data_lag_minutes: int = 0
    initial_position_btc: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.hit_ratio <= 1.0:
            raise ValueError("hit_ratio must lie in [0, 1]")
        if self.fee_rate < 0:
            raise ValueError("fee_rate must be non-negative")
        if self.data_lag_minutes < 0:
            raise ValueError("data_lag_minutes must be non-negative")

    @classmethod
    def from_dict(cls, d) -> "SimConfig":
        return cls(**dict(d or {}))


class Strategy(Protocol):
    def set_passive_order_data(self, state: PortfolioState) -> Optional[OrderIntent]: ...


@dataclass(frozen=True)
class LedgerRow:
    timestamp: int
    position_after: float
    mid: float
    mid_move: float
    pnl_pos: float
    pnl_target: float
    pnl_net: float
    pnl_adj: float
    impact_cost: float
    target_position_btc: float
    fill: Optional[Fill] = None


def check_fill(order: OrderIntent, bar: Bar, hit_ratio: float = 1.0) -> Optional[Fill]:
    """Strict range test: a buy needs the low below the limit, a sell the high above it."""
    if order is None or not order.active:
        return None
    if order.side == BUY:
        filled = bar.low < order.limit_price
    elif order.side == SELL:
        filled = bar.high > order.limit_price
    else:
        return None
    if not filled:
        return None
    return Fill(order.qty_btc * hit_ratio, order.limit_price, bar.timestamp)


def constrain_order(order: Optional[OrderIntent], mid_book: float,
                    config: SimConfig = SimConfig()) -> Optional[OrderIntent]:
    if order is None or order.side is None:
        return order
    qty = order.qty_btc
    if order.side == BUY and qty < 0:
        qty = abs(qty)
    elif order.side == SELL and qty > 0:
        qty = -abs(qty)
    if abs(qty * mid_book) > config.max_limit_order_usd:
        qty = math.copysign(config.max_limit_order_usd / mid_book, qty)
    if qty == order.qty_btc:
        return order
    return OrderIntent(order.side, order.limit_price, qty,
                       order.target_position_btc, order.risk_reduction_mode)


def step(state: PortfolioState, bar_t: Bar, bar_next: Bar, pending: Optional[OrderIntent],
         strategy: Strategy, config: SimConfig = SimConfig()):
    """Advance one interval. Returns ``(row, new_state, new_pending)``.

    ``state`` must already carry the strategy inputs for bar t (mid, mid_book,
    alpha, alpha_sd); the returned row has ``pnl_adj == pnl_net`` because
    impact is charged afterwards over the whole trade log.
    """
    fill = check_fill(pending, bar_t, config.hit_ratio)
    q = state.position_btc
    dq = fill.qty_btc if fill is not None else 0.0
    q_after = q + dq

    decision_state = PortfolioState(q_after, state.mid, state.mid_book, state.data_lag_minutes,
                                    state.alpha, state.alpha_sd, bar_t.timestamp, state.extra)
    try:
        order = strategy.set_passive_order_data(decision_state)
    except Exception as exc:
        raise StrategyError(bar_t.timestamp, exc) from exc
    order = constrain_order(order, state.mid_book, config)
    new_pending = order if (order is not None and order.active) else None

    target = q_after
    if order is not None and not math.isnan(order.target_position_btc):
        target = order.target_position_btc

    mid = bar_t.close
    dm = bar_next.close - mid
    pnl_pos = q_after * dm
    if fill is not None:
        pnl_net = pnl_pos - (fill.price - mid) * dq - config.fee_rate * mid * abs(dq)
    else:
        pnl_net = pnl_pos
    row = LedgerRow(bar_t.timestamp, q_after, mid, dm, pnl_pos, target * dm,
                    pnl_net, pnl_net, 0.0, target, fill)
    return row, decision_state, new_pending


class Ledger:
    """Column-oriented per-interval record of a backtest."""

    FIELDS = ("timestamp", "position_after", "mid", "mid_move", "pnl_pos", "pnl_target",
              "pnl_net", "pnl_adj", "impact_cost", "target_position_btc",
              "fill_qty", "fill_price", "order_qty", "order_limit")

    def __init__(self, columns: dict[str, np.ndarray], initial_position: float = 0.0,
                 impact: Optional[ImpactReport] = None):
        self.columns = columns
        self.initial_position = initial_position
        self.impact = impact

    def __len__(self) -> int:
        return len(self.columns["timestamp"])

    def __getattr__(self, name):
        try:
            return self.__dict__["columns"][name]
        except KeyError:
            raise AttributeError(name) from None

    def row(self, i: int) -> LedgerRow:
        c = self.columns
        fill = None
        if c["fill_qty"][i] != 0:
            fill = Fill(float(c["fill_qty"][i]), float(c["fill_price"][i]), int(c["timestamp"][i]))
        return LedgerRow(int(c["timestamp"][i]), *(float(c[k][i]) for k in (
            "position_after", "mid", "mid_move", "pnl_pos", "pnl_target", "pnl_net",
            "pnl_adj", "impact_cost", "target_position_btc")), fill=fill)

    def rows(self):
        return (self.row(i) for i in range(len(self)))

    @property
    def n_trades(self) -> int:
        return int(np.count_nonzero(self.columns["fill_qty"]))

    @property
    def traded_usd(self) -> float:
        c = self.columns
        mask = c["fill_qty"] != 0
        return float(np.sum(np.abs(c["fill_qty"][mask] * c["fill_price"][mask])))

    def trade_log(self) -> TradeLog:
        c = self.columns
        mask = c["fill_qty"] != 0
        return TradeLog(c["timestamp"][mask] * 60.0, c["fill_price"][mask] * c["fill_qty"][mask])

    def totals(self) -> dict[str, float]:
        c = self.columns
        return {
            "pnl_pos": float(np.sum(c["pnl_pos"])),
            "pnl_net": float(np.sum(c["pnl_net"])),
            "pnl_adj": float(np.sum(c["pnl_adj"])),
            "impact_cost": float(np.sum(c["impact_cost"])),
            "traded_usd": self.traded_usd,
            "n_trades": self.n_trades,
        }

    def _records(self):
        c = self.columns
        for i in range(len(self)):
            rec = {}
            for k in self.FIELDS:
                v = c[k][i]
                if k == "timestamp":
                    rec[k] = int(v)
                else:
                    v = float(v)
                    rec[k] = None if math.isnan(v) else v
            yield rec

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self.FIELDS)
            w.writeheader()
            for rec in self._records():
                w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                            for k, v in rec.items()})

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self._records():
                fh.write(json.dumps(rec) + "\n")


def _alpha_inputs(forecaster, series: BarSeries):
    """Accepts a fitted forecaster (``predict``), an AlphaSeries, or ``(alpha, alpha_sd)``."""
    if hasattr(forecaster, "predict"):
        forecaster = forecaster.predict(series)
    if hasattr(forecaster, "primary"):
        return np.asarray(forecaster.primary, dtype=float), float(forecaster.alpha_sd)
    alpha, alpha_sd = forecaster
    return np.asarray(alpha, dtype=float), float(alpha_sd)


def run_backtest(series: BarSeries, strategy: Strategy, forecaster,
                 config: SimConfig = SimConfig(), impact: ImpactParams = ImpactParams()) -> Ledger:
    """Replay ``series`` through ``strategy`` and charge impact over the resulting trades."""
    n = len(series)
    if n < 2:
        raise ValueError("a backtest needs at least two bars")
    alpha, alpha_sd = _alpha_inputs(forecaster, series)
    if len(alpha) != n:
        raise ValueError("alpha length does not match the series")

    # Same lifecycle as step(), unrolled over plain lists for speed; the
    # equivalence is covered by the test-suite.
    ts = series.timestamp.tolist()
    close = series.close.tolist()
    low = series.low.tolist()
    high = series.high.tolist()
    alpha = alpha.tolist()
    lag = int(config.data_lag_minutes)
    hit, fee = config.hit_ratio, config.fee_rate
    decide = strategy.set_passive_order_data

    m = n - 1
    position_after = [0.0] * m
    pnl_pos = [0.0] * m
    pnl_target = [0.0] * m
    pnl_net = [0.0] * m
    target_btc = [0.0] * m
    fill_qty = [0.0] * m
    fill_price = [math.nan] * m
    order_qty = [0.0] * m
    order_limit = [math.nan] * m

    q = config.initial_position_btc
    p_side, p_limit, p_qty = None, 0.0, 0.0
    for t in range(m):
        mid = close[t]
        # (1)-(2) fill of the resting order against this bar, position update
        dq = 0.0
        if p_side is not None:
            if (p_side == BUY and low[t] < p_limit) or (p_side == SELL and high[t] > p_limit):
                dq = p_qty * hit
                q = q + dq
                fill_price[t] = p_limit
        # (3)-(4) cancel and ask for a new order
        mid_book = close[t - lag] if t >= lag else close[0]
        state = PortfolioState(q, mid, mid_book, lag, alpha[t], alpha_sd, ts[t])
        try:
            order = decide(state)
        except Exception as exc:
            raise StrategyError(ts[t], exc) from exc
        # (5)-(6) constrain and submit
        p_side = None
        target = q
        if order is not None:
            if order.target_position_btc == order.target_position_btc:
                target = order.target_position_btc
            if order.side is not None:
                order = constrain_order(order, mid_book, config)
                if order.active:
                    p_side, p_limit, p_qty = order.side, order.limit_price, order.qty_btc
                    order_qty[t] = p_qty
                    order_limit[t] = p_limit
        # (7) accounting
        dm = close[t + 1] - mid
        pos = q * dm
        position_after[t] = q
        pnl_pos[t] = pos
        pnl_target[t] = target * dm
        target_btc[t] = target
        if dq != 0.0:
            fill_qty[t] = dq
            pnl_net[t] = pos - (fill_price[t] - mid) * dq - fee * mid * abs(dq)
        else:
            fill_price[t] = math.nan
            pnl_net[t] = pos

    cols = {
        "timestamp": series.timestamp[:-1].copy(),
        "position_after": np.array(position_after),
        "mid": series.close[:-1].copy(),
        "mid_move": np.diff(series.close),
        "pnl_pos": np.array(pnl_pos),
        "pnl_target": np.array(pnl_target),
        "pnl_net": np.array(pnl_net),
        "pnl_adj": np.zeros(m),
        "impact_cost": np.zeros(m),
        "target_position_btc": np.array(target_btc),
        "fill_qty": np.array(fill_qty),
        "fill_price": np.array(fill_price),
        "order_qty": np.array(order_qty),
        "order_limit": np.array(order_limit),
    }
    ledger = Ledger(cols, config.initial_position_btc)
    report = charge(ledger.trade_log(), impact)
    mask = cols["fill_qty"] != 0
    cols["impact_cost"][mask] = report.per_trade_costs
    cols["pnl_adj"] = cols["pnl_net"] - cols["impact_cost"]
    ledger.impact = report
    return ledger
