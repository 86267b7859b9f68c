"""Propagator market-impact model with square-root size law and power-law decay.

Price displacement at time t from the trades executed up to and including t::

    D(t) = a_perm * sum_j s_j + a_trans * sum_j s_j * G(t - t_j)
    s_j  = sign(Q_j) * (|Q_j| / V) ** delta
    G(u) = (tau0 / (u + tau0)) ** beta

Each trade pays ``c_i = D(t_i) * Q_i``, i.e. the full self-impact is charged.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import fftconvolve


@dataclass(frozen=True)
class ImpactParams:
    daily_volume_usd: float = 2e9
    alpha_perm: float = 0.005
    alpha_trans: float = 0.010
    tau0_seconds: float = 300.0
    beta: float = 0.5
    delta: float = 0.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"impact parameter {name} must be positive, got {value}")
        for name in ("beta", "delta"):
            if not 0 < getattr(self, name) < 2:
                raise ValueError(f"impact parameter {name} must lie in (0, 2)")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "ImpactParams":
        return cls(**dict(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TradeLog:
    """Executed trades: times in epoch seconds, signed USD notionals."""
    times: np.ndarray
    notionals: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.notionals = np.asarray(self.notionals, dtype=float)
        if self.times.shape != self.notionals.shape:
            raise ValueError("times and notionals must have equal length")
        if len(self.times) > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("trade log timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_trades(cls, trades: Sequence[tuple[float, float]]) -> "TradeLog":
        if not trades:
            return cls(np.empty(0), np.empty(0))
        t, q = zip(*trades)
        return cls(np.array(t), np.array(q))


@dataclass
class ImpactReport:
    per_trade_costs: np.ndarray
    per_interval: dict = field(default_factory=dict)
    total_cost: float = 0.0
    cost_bps: float = 0.0

    def to_dict(self) -> dict:
        return {
            "total_cost": self.total_cost,
            "cost_bps": self.cost_bps,
            "n_trades": int(len(self.per_trade_costs)),
        }


def decay_kernel(tau, params: ImpactParams):
    """G(tau); 1 at tau=0, power-law decay for tau >> tau0."""
    return (params.tau0_seconds / (np.asarray(tau, dtype=float) + params.tau0_seconds)) ** params.beta


def size_factor(Q, params: ImpactParams):
    """Signed concave size factor sign(Q) * (|Q|/V)^delta."""
    Q = np.asarray(Q, dtype=float)
    return np.sign(Q) * (np.abs(Q) / params.daily_volume_usd) ** params.delta


def _report(log: TradeLog, costs: np.ndarray, interval_seconds: float) -> ImpactReport:
    total = float(np.sum(costs)) if len(costs) else 0.0
    gross = float(np.sum(np.abs(log.notionals))) if len(log) else 0.0
    per_interval: dict = {}
    if interval_seconds:
        keys = np.floor(log.times / interval_seconds).astype(np.int64)
        for k, c in zip(keys.tolist(), costs.tolist()):
            per_interval[k] = per_interval.get(k, 0.0) + c
    return ImpactReport(
        per_trade_costs=costs,
        per_interval=per_interval,
        total_cost=total,
        cost_bps=total / gross * 10_000 if gross > 0 else 0.0,
    )


def charge(log: TradeLog, params: ImpactParams = ImpactParams(),
           interval_seconds: float = 60.0) -> ImpactReport:
    """Charge each trade its displacement times its notional.

    Trades sharing a timestamp are taken in log order: trade i sees trades
    0..i (itself included). The permanent term is a running sum; the
    transient term needs the full history because the kernel is not
    exponential. Long logs whose times sit on the ``interval_seconds`` grid
    (every simulator log) are summed as a single FFT convolution instead.
    ``per_interval`` is keyed by ``floor(t / interval_seconds)``.
    """
    n = len(log)
    if n == 0:
        return _report(log, np.empty(0), interval_seconds)
    s = size_factor(log.notionals, params)
    perm = np.cumsum(s)
    if n > GRID_PATH_MIN_TRADES and interval_seconds and _on_grid(log.times, interval_seconds):
        trans = _transient_on_grid(log.times, s, params, interval_seconds)
    else:
        trans = _transient_direct(log.times, s, params)
    displacement = params.alpha_perm * perm + params.alpha_trans * trans
    return _report(log, displacement * log.notionals, interval_seconds)


GRID_PATH_MIN_TRADES = 2000


def _on_grid(t: np.ndarray, step: float) -> bool:
    k = (t - t[0]) / step
    return bool(np.all(k == np.round(k)))


def _transient_on_grid(t: np.ndarray, s: np.ndarray, params: ImpactParams, step: float) -> np.ndarray:
    """Transient sums for trades on a regular time grid, via one convolution.

    Trades in the same grid slot are resolved in log order with G(0) = 1.
    """
    slot = np.round((t - t[0]) / step).astype(np.int64)
    m = int(slot[-1]) + 1
    per_slot = np.bincount(slot, weights=s, minlength=m)
    kernel = decay_kernel(np.arange(m) * step, params)
    conv = fftconvolve(per_slot, kernel)[:m]
    # prefix of same-slot trades up to and including each trade
    csum = np.cumsum(s)
    first = np.searchsorted(slot, slot, side="left")
    before = np.where(first > 0, csum[first - 1], 0.0)
    same_slot_prefix = csum - before
    return conv[slot] - per_slot[slot] + same_slot_prefix


def _transient_direct(t: np.ndarray, s: np.ndarray, params: ImpactParams) -> np.ndarray:
    n = len(t)
    trans = np.zeros(n)
    tau0, beta = params.tau0_seconds, params.beta
    rows, cols = 256, 8192
    for lo in range(0, n, rows):
        hi = min(n, lo + rows)
        ti = t[lo:hi, None]
        for clo in range(0, hi, cols):
            chi = min(hi, clo + cols)
            g = (tau0 / (np.maximum(ti - t[None, clo:chi], 0.0) + tau0)) ** beta
            # trade j contributes to i only when j <= i in log order
            g[np.arange(lo, hi)[:, None] < np.arange(clo, chi)[None, :]] = 0.0
            trans[lo:hi] += g @ s[clo:chi]
    return trans


def charge_bruteforce(log: TradeLog, params: ImpactParams = ImpactParams(),
                      interval_seconds: float = 60.0) -> ImpactReport:
    """Direct O(N^2) double loop, kept as a reference for :func:`charge`."""
    n = len(log)
    costs = []
    for i in range(n):
        d = 0.0
        for j in range(i + 1):
            q = log.notionals[j]
            sj = math.copysign((abs(q) / params.daily_volume_usd) ** params.delta, q) if q else 0.0
            g = (params.tau0_seconds / (log.times[i] - log.times[j] + params.tau0_seconds)) ** params.beta
            d += params.alpha_perm * sj + params.alpha_trans * sj * g
        costs.append(d * log.notionals[i])
    return _report(log, np.array(costs, dtype=float), interval_seconds)
