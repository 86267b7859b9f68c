"""Base passive executor: alpha -> target position -> one passive limit order."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping, Optional

from .simulator import BUY, SELL, OrderIntent, PortfolioState

# Fee constants used by the expected-fee threshold; not part of the genome.
TAKER_FEE = 0.015 / 100
FEE_FLOOR = 0.005 / 100


@dataclass(frozen=True)
class StrategyParams:
    sizing_factor: float = 10_000.0
    q_max: float = 200_000.0
    max_trade_frac: float = 0.2
    min_trade_size_usd: float = 0.0
    alpha_adjustment_knob: float = 0.5
    risk_reduction_factor: float = 0.6
    zp: float = 1e-4
    zp_riskoff: float = 3e-5
    fast_flat_minutes: float = 10.0
    std: float = 1.0
    context_correction_factor: float = 0.0

    def updated(self, genome: Mapping[str, float]) -> "StrategyParams":
        """Apply a genome (lower- or UPPER_CASE keys); unknown keys raise."""
        names = {f.name for f in fields(self)}
        changes = {}
        for key, value in genome.items():
            name = key.lower()
            if name not in names:
                raise KeyError(f"unknown strategy parameter {key!r}")
            changes[name] = float(value)
        return replace(self, **changes)

    def to_genome(self) -> dict[str, float]:
        return {k.upper(): v for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_genome(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StrategyParams":
        return cls().updated(json.loads(text))


@dataclass(frozen=True, slots=True)
class TargetDecision:
    side: Optional[str]
    target_trade_qty: float
    risk_reduction_mode: bool
    limit_order_depth: float
    target_position_usd: float = 0.0
    target_position_btc: float = 0.0
    raw_target_usd: float = 0.0  # before the lag/inventory corrections and clipping
    flag: str = ""


def _sign(x: float) -> float:
    return float(x > 0) - float(x < 0)


def set_target(state: PortfolioState, params: StrategyParams = StrategyParams()) -> TargetDecision:
    alpha = state.alpha
    alpha_sd = state.alpha_sd
    mid, mid_book = state.mid, state.mid_book
    q_x = state.position_btc
    p = params

    depth = p.std * p.zp
    if not (math.isfinite(alpha) and math.isfinite(alpha_sd) and alpha_sd > 0):
        return TargetDecision(None, 0.0, False, depth, q_x * mid_book, q_x, q_x * mid_book,
                              flag="non-finite alpha")
    expected_fee = max(TAKER_FEE - depth, FEE_FLOOR)

    realized_alpha = math.log(mid_book / mid)
    alpha_corrected = alpha - p.context_correction_factor * realized_alpha
    q_usd = q_x * mid_book
    if not math.isfinite(q_usd):
        q_usd = 0.0

    k = p.sizing_factor / alpha_sd
    small_alpha = abs(alpha_corrected - q_usd / k) < expected_fee
    wrong_direction = _sign(q_x * alpha_corrected) < 0
    risk_reduction_mode = small_alpha and wrong_direction

    if risk_reduction_mode:
        target_usd = q_usd * p.risk_reduction_factor
    elif (abs(realized_alpha) * p.context_correction_factor > abs(alpha)
          and _sign(realized_alpha * alpha) > 0):
        target_usd = q_usd
    else:
        long_target = p.sizing_factor * (alpha_corrected - expected_fee) / alpha_sd
        short_target = p.sizing_factor * (alpha_corrected + expected_fee) / alpha_sd
        if long_target > q_usd:
            target_usd = long_target
        elif short_target < q_usd:
            target_usd = short_target
        else:
            target_usd = q_usd
    raw_target = target_usd

    lag_adjustment = 1 - min(state.data_lag_minutes, p.fast_flat_minutes) / p.fast_flat_minutes
    if risk_reduction_mode:
        correction = lag_adjustment
    else:
        correction = (1 - math.tanh(abs(q_usd) / p.q_max) * p.alpha_adjustment_knob) * lag_adjustment

    target_usd = min(max(target_usd * correction, -p.q_max), p.q_max)
    target_btc = target_usd / mid_book

    max_trade_btc = p.max_trade_frac * p.q_max / mid_book
    trade_qty = min(max(target_btc - q_x, -max_trade_btc), max_trade_btc)

    delta_usd = abs(target_btc - q_x) * mid_book
    if target_btc > q_x and delta_usd > p.min_trade_size_usd:
        side = BUY
    elif target_btc < q_x and delta_usd > p.min_trade_size_usd:
        side = SELL
    else:
        side = None
    return TargetDecision(side, trade_qty, risk_reduction_mode, depth,
                          target_usd, target_btc, raw_target)


def set_limit_order(state: PortfolioState, decision: TargetDecision,
                    params: StrategyParams = StrategyParams()) -> OrderIntent:
    """Price the order at ``mid_book * exp(-sign(qty) * depth)``.

    A decision without a side yields an inactive intent that still carries
    the target position for the ledger.
    """
    if decision.side is None:
        return OrderIntent(None, math.nan, 0.0, decision.target_position_btc, decision.risk_reduction_mode)
    depth = params.zp_riskoff * params.std if decision.risk_reduction_mode else decision.limit_order_depth
    limit = state.mid_book * math.exp(-_sign(decision.target_trade_qty) * depth)
    return OrderIntent(decision.side, limit, decision.target_trade_qty,
                       decision.target_position_btc, decision.risk_reduction_mode)


def set_passive_order_data(state: PortfolioState, params: StrategyParams = StrategyParams()) -> OrderIntent:
    return set_limit_order(state, set_target(state, params), params)


class PassiveExecutor:
    """Stateless strategy object binding a parameter set, for the simulator."""

    def __init__(self, params: StrategyParams | Mapping[str, float] | None = None):
        if params is None:
            params = StrategyParams()
        elif not isinstance(params, StrategyParams):
            params = StrategyParams().updated(params)
        self.params = params

    def set_target(self, state: PortfolioState) -> TargetDecision:
        return set_target(state, self.params)

    def set_limit_order(self, state: PortfolioState, decision: TargetDecision) -> OrderIntent:
        return set_limit_order(state, decision, self.params)

    def set_passive_order_data(self, state: PortfolioState) -> OrderIntent:
        return set_limit_order(state, set_target(state, self.params), self.params)

    def __repr__(self) -> str:
        return f"PassiveExecutor({self.params!r})"
