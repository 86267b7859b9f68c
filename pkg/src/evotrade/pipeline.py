"""Glue between data, forecaster, executor and simulator.

:class:`BacktestObjective` turns a genome into impact-adjusted PnL on one
split; it is picklable so evaluations can run in worker processes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .forecaster import DEFAULT_SPANS, Forecaster
from .impact import ImpactParams
from .market_data import BarSeries, synthesize
from .simulator import Ledger, SimConfig, run_backtest
from .strategy import PassiveExecutor, StrategyParams

MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class FixtureSpec:
    """Signal-bearing synthetic market cut into train / validation / test days."""
    seed: int = 7
    train_days: int = 10
    validation_days: int = 2
    test_days: int = 2
    vol_per_min: float = 5e-4
    signal_coef: float = 3.5e-4
    signal_halflife: float = 20.0
    base_price: float = 50_000.0

    @classmethod
    def from_dict(cls, d: Optional[Mapping]) -> "FixtureSpec":
        return cls(**dict(d or {}))


def frozen_fixture(spec: FixtureSpec = FixtureSpec()) -> dict[str, BarSeries]:
    days = (spec.train_days, spec.validation_days, spec.test_days)
    series = synthesize(spec.seed, sum(days) * MINUTES_PER_DAY, spec.base_price, spec.vol_per_min,
                        spec.signal_coef, spec.signal_halflife)
    out, lo = {}, 0
    for name, d in zip(("train", "validation", "test"), days):
        hi = lo + d * MINUTES_PER_DAY
        out[name] = series.take(slice(lo, hi), label=name)
        lo = hi
    return out


class BacktestObjective:
    """Genome -> total impact-adjusted PnL of the executor on ``series``."""

    def __init__(self, series: BarSeries, forecaster: Forecaster,
                 base: StrategyParams = StrategyParams(), sim: SimConfig = SimConfig(),
                 impact: ImpactParams = ImpactParams()):
        self.series = series
        alpha = forecaster.predict(series)
        self.alpha = (np.asarray(alpha.primary), float(alpha.alpha_sd))
        self.base = base
        self.sim = sim
        self.impact = impact

    def ledger(self, genome: Optional[Mapping[str, float]] = None) -> Ledger:
        params = self.base.updated(genome or {})
        return run_backtest(self.series, PassiveExecutor(params), self.alpha, self.sim, self.impact)

    def __call__(self, genome: Optional[Mapping[str, float]] = None) -> float:
        return float(np.sum(self.ledger(genome).pnl_adj))


def fixture_objectives(spec: FixtureSpec = FixtureSpec(), ridge_lambda: float = 0.5,
                       spans=DEFAULT_SPANS, sim: SimConfig = SimConfig(),
                       impact: ImpactParams = ImpactParams()) -> dict[str, BacktestObjective]:
    """Train the forecaster on the fixture's train days; one objective per evaluation split."""
    parts = frozen_fixture(spec)
    fc = Forecaster.train(parts["train"], ridge_lambda, spans=spans)
    return {name: BacktestObjective(parts[name], fc, sim=sim, impact=impact)
            for name in ("validation", "test")}
