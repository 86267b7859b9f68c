"""Command-line entry point: ``evotrade <command> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage, configuration or input
data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Optional

import jsonschema
import numpy as np

from .calibration import DEFAULT_SPACE, ParamSpace, TpeConfig, calibrate
from .config import ConfigError, load_config, schema
from .evolution import (EvolutionConfig, PerturbMutator, RunRecord, SubprocessMutator, evolve)
from .forecaster import (PRIMARY_HORIZON, FeatureMatrix, Forecaster, day_labels, default_calcset,
                         fit_ridge, forward_returns, greedy_select, predict_alpha, score_forecast)
from .impact import ImpactParams
from .market_data import DataError, SplitSpec, load_csv, split, synthesize
from .pipeline import MINUTES_PER_DAY, BacktestObjective, FixtureSpec, frozen_fixture
from .simulator import SimConfig
from .stats import (DailyPnlSeries, NullModel, analysis_report, null_block, perf_metrics,
                    sizing_decomposition, split_report)
from .strategy import StrategyParams

log = logging.getLogger("evotrade")

SPLITS = ("train", "validation", "test")


class UsageError(Exception):
    pass


@dataclass
class Workspace:
    cfg: dict
    parts: dict
    forecaster: Forecaster
    base: StrategyParams
    sim: SimConfig
    impact: ImpactParams

    def objective(self, name: str) -> BacktestObjective:
        part = self.parts[name]
        if len(part) < 2:
            raise DataError(f"split {name!r} has fewer than two bars")
        return BacktestObjective(part, self.forecaster, self.base, self.sim, self.impact)


def build_workspace(cfg: dict) -> Workspace:
    data = cfg["data"]
    try:
        if data.get("csv"):
            series = load_csv(data["csv"], data.get("schema"))
            parts = dict(zip(SPLITS, split(series, SplitSpec.from_dict(cfg.get("splits") or {}))))
        else:
            parts = frozen_fixture(FixtureSpec.from_dict(data.get("synthetic")))
        sim = SimConfig.from_dict(cfg["sim"])
        impact = ImpactParams.from_dict(cfg["impact"])
        base = StrategyParams().updated(cfg["strategy"])
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(str(exc)) from exc
    if len(parts["train"]) < 2:
        raise DataError("train split has fewer than two bars")
    fc = cfg["forecaster"]
    forecaster = Forecaster.train(parts["train"], fc["ridge_lambda"], spans=fc["spans"], mode=fc["mode"])
    return Workspace(cfg, parts, forecaster, base, sim, impact)


# ---------------------------------------------------------------------------
# helpers

def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _require_seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise UsageError(f"{args.command} is stochastic and needs --seed")
    return int(seed)


def _splits(args, default=("validation", "test")) -> list[str]:
    if not args.splits:
        return list(default)
    names = [s.strip() for s in args.splits.split(",") if s.strip()]
    bad = [s for s in names if s not in SPLITS]
    if bad or not names:
        raise UsageError(f"unknown split(s) {bad}; choose from {', '.join(SPLITS)}")
    return names


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def write_report(path: str, report: dict) -> None:
    jsonschema.validate(report, schema("report.schema.json"))
    _write_json(path, report)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return f"{v:,.2f}"


def print_summary(splits: dict, stream=None) -> None:
    stream = stream or sys.stdout
    stream.write(f"{'split':<12}{'sharpe':>10}{'pnl_adj':>16}{'volume':>18}{'win_rate':>10}{'trades':>9}\n")
    for name, m in splits.items():
        stream.write(f"{name:<12}{_fmt(m.get('sharpe')):>10}{_fmt(m.get('total_pnl_adj')):>16}"
                     f"{_fmt(m.get('total_volume')):>18}{_fmt(m.get('win_rate')):>10}{m['n_trades']:>9}\n")


def _baseline_null(ws: Workspace) -> dict:
    """Null-model inputs from the default executor on validation and test."""
    out = {}
    for name in ("validation", "test"):
        daily = DailyPnlSeries.from_ledger(ws.objective(name).ledger())
        entry = {"pnl": float(np.sum(daily.pnl_adj)), "days": len(daily), "sharpe": None}
        if len(daily) >= 2:
            entry["sharpe"] = perf_metrics(daily).sharpe
        out[name] = entry
    return out


def _null_section(baseline: dict, K: int, observed_val, observed_test) -> Optional[dict]:
    v = baseline.get("validation") or {}
    s0 = v.get("sharpe")
    if not isinstance(s0, (int, float)) or not math.isfinite(s0) or s0 <= 0 or v.get("pnl", 0) <= 0:
        return None
    null = NullModel.from_baseline(v["pnl"], s0, v["days"])
    section = {"validation": null_block(null, K, observed_val)}
    t = baseline.get("test")
    if t:
        section["test"] = null_block(null, K, observed_test, window_days=t["days"], pnl0=t["pnl"])
    return section


# ---------------------------------------------------------------------------
# commands

def cmd_backtest(args, cfg) -> int:
    names = _splits(args)
    ws = build_workspace(cfg)
    out = _out_dir(args)
    genome = _load_genome(args.genome) if args.genome else {}
    blocks = {}
    for name in names:
        ledger = ws.objective(name).ledger(genome)
        ledger.to_csv(os.path.join(out, f"ledger_{name}.csv"))
        ledger.to_jsonl(os.path.join(out, f"ledger_{name}.jsonl"))
        blocks[name] = split_report(ledger)
    report = analysis_report(splits=blocks, extra={"command": "backtest"})
    write_report(os.path.join(out, "report.json"), report)
    print_summary(blocks)
    return 0


def _load_genome(path: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"genome file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _space(cfg) -> ParamSpace:
    items = cfg["calibration"].get("space")
    return ParamSpace.from_list(items) if items else DEFAULT_SPACE


def cmd_calibrate(args, cfg) -> int:
    seed = _require_seed(args, cfg)
    c = cfg["calibration"]
    tpe = TpeConfig(c["n_random"], c["n_guided"], c["gamma"], c["n_candidates"], seed)
    ws = build_workspace(cfg)
    out = _out_dir(args)
    objective = ws.objective("validation")

    def progress(rec):
        log.info("trial %d (%s): %s", rec.trial_index, rec.phase, _fmt(rec.objective))

    result = calibrate(_space(cfg), objective, tpe, progress, jobs=args.jobs)
    result.write_jsonl(os.path.join(out, "trials.jsonl"))
    _write_json(os.path.join(out, "best_genome.json"), result.best.genome)
    blocks = {"validation": split_report(objective.ledger(result.best.genome))}
    if len(ws.parts["test"]) >= 2:
        blocks["test"] = split_report(ws.objective("test").ledger(result.best.genome))
    report = analysis_report(splits=blocks, extra={
        "command": "calibrate",
        "calibration": {"best": result.best.genome, "best_objective": result.best.objective,
                        "n_trials": len(result.trials), "convergence": result.convergence()},
    })
    write_report(os.path.join(out, "report.json"), report)
    print_summary(blocks)
    return 0


def _mutators(cfg, space: ParamSpace) -> list:
    e = cfg["evolution"]
    mix = dict(e.get("mutator_mix") or {})
    out = []
    for name, weight in mix.items():
        if weight <= 0:
            continue
        if name == "perturb":
            out.append((PerturbMutator(space, "perturb", p_cross=0.0), weight))
        elif name == "crossover":
            out.append((PerturbMutator(space, "crossover", p_cross=1.0), weight))
        elif name == "external":
            if not e.get("external_mutator"):
                raise ConfigError("mutator_mix names 'external' but evolution.external_mutator is unset")
            out.append((SubprocessMutator(e["external_mutator"]), weight))
        else:
            raise ConfigError(f"unknown mutator {name!r} in evolution.mutator_mix")
    if not out:
        raise ConfigError("evolution.mutator_mix has no positive weights")
    return out


def cmd_evolve(args, cfg) -> int:
    seed = _require_seed(args, cfg)
    e = dict(cfg["evolution"])
    if args.generations is not None:
        e["generations"] = args.generations
    e["seed"] = seed
    config = EvolutionConfig.from_dict(e)
    space = _space(cfg)
    mutators = _mutators(cfg, space)
    ws = build_workspace(cfg)
    out = _out_dir(args)
    val, test = ws.objective("validation"), ws.objective("test")

    def progress(c):
        log.info("candidate %d gen %d (%s): %s", c.id, c.generation, c.mutator_tag, _fmt(c.fitness))

    record = evolve(config, val, mutators, ws.base.to_genome(), space, oos_evaluator=test,
                    progress=progress, jobs=args.jobs)
    record.write_jsonl(os.path.join(out, "run_record.jsonl"))
    best = record.best()
    _write_json(os.path.join(out, "best_genome.json"), best.genome)

    baseline = _baseline_null(ws)
    _write_json(os.path.join(out, "baseline.json"), baseline)
    base_daily = DailyPnlSeries.from_ledger(val.ledger())
    best_ledger = val.ledger(best.genome)
    blocks = {"validation": split_report(best_ledger), "test": split_report(test.ledger(best.genome))}
    K = sum(1 for c in record.candidates if not c.failed)
    report = analysis_report(
        splits=blocks,
        sizing=sizing_decomposition(base_daily, DailyPnlSeries.from_ledger(best_ledger)),
        null=_null_section(baseline, K, best.fitness, record.oos.get(best.id)),
        record=record,
        extra={"command": "evolve"},
    )
    write_report(os.path.join(out, "report.json"), report)
    print_summary(blocks)
    return 0


def cmd_analyze(args, cfg) -> int:
    if not os.path.exists(args.record):
        raise FileNotFoundError(f"run record not found: {args.record}")
    record = RunRecord.read_jsonl(args.record)
    if not record.candidates:
        raise DataError(f"run record {args.record} is empty")
    baseline = None
    if args.baseline:
        if not os.path.exists(args.baseline):
            raise FileNotFoundError(f"baseline file not found: {args.baseline}")
        with open(args.baseline) as fh:
            baseline = json.load(fh)
    elif cfg.get("analysis"):
        a = cfg["analysis"]
        baseline = {"validation": {"pnl": a.get("baseline_pnl"), "sharpe": a.get("baseline_sharpe"),
                                   "days": a.get("window_days")}}
        if "test_baseline_pnl" in a:
            baseline["test"] = {"pnl": a["test_baseline_pnl"],
                                "days": a.get("test_window_days", a.get("window_days"))}
    best = record.best()
    K = sum(1 for c in record.candidates if not c.failed)
    null = _null_section(baseline, K, best.fitness, record.oos.get(best.id)) if baseline and best else None
    report = analysis_report(null=null, record=record, extra={"command": "analyze"})
    out = _out_dir(args)
    write_report(os.path.join(out, "report.json"), report)
    iso = report["is_oos"]
    sys.stdout.write(f"candidates {len(record.candidates)}  best IS {_fmt(iso['is_best'][-1])}  "
                     f"champion OOS {_fmt(iso['oos_of_champion'][-1])}  "
                     f"degradation {_fmt(iso['degradation'])}\n")
    return 0


def _ema_columns(series, specs) -> FeatureMatrix:
    cols = [default_calcset(series, [span], mode) for _, span, mode in specs]
    return FeatureMatrix(series.timestamp, [c.names[0] for c in cols], np.hstack([c.values for c in cols]))


def cmd_select_features(args, cfg) -> int:
    f = cfg["features"]
    ws = build_workspace(cfg)
    out = _out_dir(args)
    train, val = ws.parts["train"], ws.parts["validation"]
    specs = [(None, s, m) for m in ("span", "halflife") for s in f["spans"]]
    cands = _ema_columns(train, specs)
    chosen = greedy_select(cands, forward_returns(train.close, PRIMARY_HORIZON), f["max_k"], f["corr_cap"])
    picked = [specs[cands.names.index(n)] for n in chosen]
    result = {"selected": chosen, "n_candidates": len(cands.names)}
    if chosen and len(val) >= 2:
        model = fit_ridge(_ema_columns(train, picked), train, cfg["forecaster"]["ridge_lambda"])
        alpha = predict_alpha(model, _ema_columns(val, picked))
        metrics = score_forecast(alpha, forward_returns(val.close, PRIMARY_HORIZON), day_labels(val.timestamp))
        result["validation_metrics"] = metrics.to_dict()
    _write_json(os.path.join(out, "features.json"), result)
    write_report(os.path.join(out, "report.json"),
                 {"schema_version": "1.0", "command": "select-features", "features": result})
    sys.stdout.write("selected: " + ", ".join(chosen) + "\n")
    return 0


def cmd_synth_data(args, cfg) -> int:
    seed = _require_seed(args, cfg)
    spec = FixtureSpec.from_dict(cfg["data"].get("synthetic"))
    days = args.days if args.days is not None else spec.train_days + spec.validation_days + spec.test_days
    series = synthesize(seed, days * MINUTES_PER_DAY, spec.base_price, spec.vol_per_min,
                        spec.signal_coef, spec.signal_halflife)
    out = _out_dir(args)
    path = os.path.join(out, "synthetic.csv")
    series.to_csv(path)
    sys.stdout.write(f"wrote {len(series)} bars to {path}\n")
    return 0


COMMANDS = {
    "backtest": cmd_backtest,
    "calibrate": cmd_calibrate,
    "evolve": cmd_evolve,
    "analyze": cmd_analyze,
    "select-features": cmd_select_features,
    "synth-data": cmd_synth_data,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, help="RNG seed (required by stochastic commands)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for evaluations")
    common.add_argument("--splits", help="comma-separated subset of train,validation,test")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="evotrade", description="Passive-execution backtesting and strategy search.")
    sub = p.add_subparsers(dest="command", required=True)
    b = sub.add_parser("backtest", parents=[common], help="replay the executor on chosen splits")
    b.add_argument("--genome", metavar="PATH", help="JSON genome applied on top of the config")
    sub.add_parser("calibrate", parents=[common], help="TPE search over executor parameters")
    e = sub.add_parser("evolve", parents=[common], help="island MAP-Elites search")
    e.add_argument("--generations", type=int)
    a = sub.add_parser("analyze", parents=[common], help="report on an evolution run record")
    a.add_argument("record", help="run record JSONL")
    a.add_argument("--baseline", metavar="PATH", help="baseline.json written by evolve")
    sub.add_parser("select-features", parents=[common], help="greedy decorrelated EMA selection")
    s = sub.add_parser("synth-data", parents=[common], help="write a synthetic bar CSV")
    s.add_argument("--days", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, DataError, FileNotFoundError) as exc:
        sys.stderr.write(f"evotrade {args.command}: error: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        log.debug("failure", exc_info=True)
        sys.stderr.write(f"evotrade {args.command}: runtime error: {exc!r}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
