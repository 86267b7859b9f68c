"""Minute-bar passive execution backtesting with impact costs and strategy search."""
from .calibration import DEFAULT_SPACE, ParamBound, ParamSpace, TpeConfig, calibrate
from .evolution import EvolutionConfig, PerturbMutator, RunRecord, evolve, mutator_stats
from .forecaster import Forecaster, greedy_select, score_forecast
from .impact import ImpactParams, TradeLog, charge
from .market_data import BarSeries, SplitSpec, load_csv, split, synthesize
from .pipeline import BacktestObjective, FixtureSpec, fixture_objectives, frozen_fixture
from .simulator import Ledger, SimConfig, run_backtest
from .stats import DailyPnlSeries, NullModel, perf_metrics, phacking_ceiling, z_excess
from .strategy import PassiveExecutor, StrategyParams

__all__ = [
    "BacktestObjective", "BarSeries", "DEFAULT_SPACE", "DailyPnlSeries", "EvolutionConfig",
    "FixtureSpec", "Forecaster", "ImpactParams", "Ledger", "NullModel", "ParamBound", "ParamSpace",
    "PassiveExecutor", "PerturbMutator", "RunRecord", "SimConfig", "SplitSpec", "StrategyParams",
    "TpeConfig", "TradeLog", "calibrate", "charge", "evolve", "fixture_objectives", "frozen_fixture",
    "greedy_select", "load_csv", "mutator_stats", "perf_metrics", "phacking_ceiling", "run_backtest",
    "score_forecast", "split", "synthesize", "z_excess",
]
