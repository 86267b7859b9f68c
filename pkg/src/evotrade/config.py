"""Run configuration: one JSON document with a section per module.

Precedence, lowest first: built-in defaults, the config file, then
environment variables named ``EVOTRADE_<SECTION>__<KEY>`` (nested keys
joined by ``__``; values parsed as JSON when possible).
"""
from __future__ import annotations

import copy
import json
import os
from importlib import resources
from typing import Mapping, Optional

import jsonschema

ENV_PREFIX = "EVOTRADE_"


class ConfigError(ValueError):
    """Bad or inconsistent configuration (a usage error)."""


# Defaults reproduce the baseline executor, impact model and search bounds.
# The data section selects the 14-day frozen synthetic fixture; the bundled
# ``fixture_3day.json`` config is a one-day-per-split variant for smoke runs.
DEFAULTS: dict = {
    "data": {
        "csv": None,
        "synthetic": {"seed": 7, "train_days": 10, "validation_days": 2, "test_days": 2,
                      "vol_per_min": 5e-4, "signal_coef": 3.5e-4, "signal_halflife": 20.0,
                      "base_price": 50_000.0},
    },
    "splits": {},
    "sim": {},
    "impact": {},
    "strategy": {},
    "forecaster": {"ridge_lambda": 0.5, "spans": [1, 5, 10], "mode": "span"},
    "calibration": {"n_random": 30, "n_guided": 90, "gamma": 0.25, "n_candidates": 24,
                    "space": None},
    "evolution": {"generations": 40, "batch_size": 5, "n_islands": 5, "migration_period": 5,
                  "migration_rate": 0.10, "archive_capacity": 50, "budget_cap": 18,
                  "budget_penalty": 0.5, "mutator_mix": {"perturb": 0.7, "crossover": 0.3},
                  "external_mutator": None},
    "features": {"spans": [1, 2, 3, 5, 8, 10, 15, 20, 30, 60, 120], "max_k": 10, "corr_cap": 0.85},
    "analysis": {},
    "seed": None,
}


def bundled_path(name: str) -> str:
    return str(resources.files("evotrade").joinpath("data", name))


def schema(name: str) -> dict:
    return json.loads(resources.files("evotrade").joinpath("schemas", name).read_text())


def deep_merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def env_overrides(env: Mapping[str, str]) -> dict:
    out: dict = {}
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = [p.lower() for p in name[len(ENV_PREFIX):].split("__") if p]
        if not path:
            continue
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = value
    return out


def load_config(path: Optional[str] = None, env: Optional[Mapping[str, str]] = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                cfg = deep_merge(cfg, json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = deep_merge(cfg, env_overrides(os.environ if env is None else env))
    try:
        jsonschema.validate(cfg, schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from exc
    return cfg
