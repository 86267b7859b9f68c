"""Tree-structured Parzen Estimator search over bounded strategy parameters.

After ``n_random`` uniform draws, each guided trial splits the history at the
``gamma`` quantile of the objective, fits independent per-dimension Parzen
densities l(x) to the elite trials and g(x) to the rest, samples
``n_candidates`` points from l and keeps the one maximising l(x)/g(x).
Log-scaled dimensions are modelled in log10 space.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np
from scipy.special import logsumexp, ndtr

log = logging.getLogger(__name__)

Genome = dict  # parameter name -> value


@dataclass(frozen=True)
class ParamBound:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"{self.name}: unknown scale {self.scale!r}")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"{self.name}: log scale needs a positive lower bound")

    # internal coordinates: log10 for log-scaled parameters
    @property
    def lo(self) -> float:
        return math.log10(self.lower) if self.scale == "log" else self.lower

    @property
    def hi(self) -> float:
        return math.log10(self.upper) if self.scale == "log" else self.upper

    def to_internal(self, x: float) -> float:
        return math.log10(x) if self.scale == "log" else float(x)

    def from_internal(self, u: float) -> float:
        u = min(max(u, self.lo), self.hi)
        x = 10.0 ** u if self.scale == "log" else u
        return min(max(x, self.lower), self.upper)


@dataclass(frozen=True)
class ParamSpace:
    params: tuple

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def __len__(self) -> int:
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def contains(self, genome: Mapping[str, float]) -> bool:
        return all(p.lower <= genome[p.name] <= p.upper for p in self.params)

    def clip(self, genome: Mapping[str, float]) -> Genome:
        out = dict(genome)
        for p in self.params:
            out[p.name] = min(max(float(out[p.name]), p.lower), p.upper)
        return out

    def to_unit(self, genome: Mapping[str, float]) -> np.ndarray:
        """Genome -> [0, 1]^d in internal (log-aware) coordinates."""
        return np.array([(p.to_internal(genome[p.name]) - p.lo) / (p.hi - p.lo) for p in self.params])

    def from_unit(self, u) -> Genome:
        return {p.name: p.from_internal(p.lo + float(v) * (p.hi - p.lo)) for p, v in zip(self.params, u)}

    def to_list(self) -> list[dict]:
        return [asdict(p) for p in self.params]

    @classmethod
    def from_list(cls, items: Iterable[Mapping]) -> "ParamSpace":
        return cls(tuple(ParamBound(**dict(i)) for i in items))


# The eight calibrated executor parameters with their search bounds.
DEFAULT_SPACE = ParamSpace((
    ParamBound("sizing_factor", 500.0, 50_000.0, "log"),
    ParamBound("max_trade_frac", 0.01, 0.5, "linear"),
    ParamBound("min_trade_size_usd", 0.0, 5_000.0, "linear"),
    ParamBound("alpha_adjustment_knob", 0.0, 1.0, "linear"),
    ParamBound("risk_reduction_factor", 0.0, 1.0, "linear"),
    ParamBound("zp", 1e-6, 1e-2, "log"),
    ParamBound("zp_riskoff", 1e-6, 1e-2, "log"),
    ParamBound("fast_flat_minutes", 2.0, 60.0, "linear"),
))


@dataclass
class TrialRecord:
    trial_index: int
    genome: Genome
    objective: float
    phase: str  # "random" | "guided"
    failed: bool = False
    error: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        if not math.isfinite(self.objective):
            d["objective"] = None
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        if d["objective"] is None:
            d["objective"] = -math.inf
        return cls(**d)


@dataclass(frozen=True)
class TpeConfig:
    n_random: int = 30
    n_guided: int = 90
    gamma: float = 0.25
    n_candidates: int = 24
    seed: int = 0
    min_bandwidth: float = 1e-3  # fraction of the (internal) parameter range

    def __post_init__(self):
        if self.n_random < 2:
            raise ValueError("n_random must be >= 2")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    @classmethod
    def from_dict(cls, d) -> "TpeConfig":
        return cls(**dict(d or {}))


def sample_random(space: ParamSpace, rng: np.random.Generator) -> Genome:
    """Uniform on each parameter's own scale (log10-uniform for log parameters)."""
    return {p.name: p.from_internal(rng.uniform(p.lo, p.hi)) for p in space}


class _Parzen:
    """1-D Gaussian mixture truncated to [lo, hi].

    Components sit on the observed points with the rule-of-thumb bandwidth
    ``1.06 * sd * n**(-1/5)``, floored at ``range / min(100, n+1)``, plus one
    broad prior component (centre of the range, sd = range) of weight
    ``1/(n+1)`` that keeps the estimate from collapsing onto a single point.
    """

    def __init__(self, points: np.ndarray, lo: float, hi: float, min_bw: float):
        pts = np.asarray(points, dtype=float)
        n = len(pts)
        width = hi - lo
        sd = float(np.std(pts)) if n > 1 else 0.0
        floor = max(min_bw, 1.0 / min(100, n + 1)) * width
        bw = min(max(1.06 * sd * n ** (-0.2), floor), width)
        self.mu = np.append(pts, 0.5 * (lo + hi))
        self.sigma = np.append(np.full(n, bw), width)
        self.weights = np.full(n + 1, 1.0 / (n + 1))
        self.lo, self.hi = lo, hi
        mass = ndtr((hi - self.mu) / self.sigma) - ndtr((lo - self.mu) / self.sigma)
        self.log_norm = np.log(self.weights) - np.log(np.maximum(mass, 1e-300)) \
            - np.log(self.sigma * math.sqrt(2 * math.pi))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = np.empty(size)
        for k in range(size):
            i = rng.choice(len(self.mu), p=self.weights)
            for _ in range(100):
                x = rng.normal(self.mu[i], self.sigma[i])
                if self.lo <= x <= self.hi:
                    break
            else:
                x = min(max(x, self.lo), self.hi)
            out[k] = x
        return out

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x)[:, None] - self.mu[None, :]) / self.sigma[None, :]
        return logsumexp(-0.5 * z * z + self.log_norm[None, :], axis=1)


def tpe_propose(history: list[TrialRecord], space: ParamSpace, config: TpeConfig,
                rng: np.random.Generator) -> Genome:
    ok = [r for r in history if not r.failed and math.isfinite(r.objective)]
    if len(ok) < 2:
        return sample_random(space, rng)
    objs = np.array([r.objective for r in ok])
    if np.all(objs == objs[0]):
        return sample_random(space, rng)

    # best first; stable so earlier trials win ties
    order = np.argsort(-objs, kind="stable")
    n_elite = min(max(1, int(math.ceil(config.gamma * len(ok)))), len(ok) - 1)
    elite = [ok[i] for i in order[:n_elite]]
    rest = [ok[i] for i in order[n_elite:]]

    score = np.zeros(config.n_candidates)
    cand = np.empty((config.n_candidates, len(space)))
    for d, p in enumerate(space):
        good = _Parzen(np.array([p.to_internal(r.genome[p.name]) for r in elite]), p.lo, p.hi,
                       config.min_bandwidth)
        bad = _Parzen(np.array([p.to_internal(r.genome[p.name]) for r in rest]), p.lo, p.hi,
                      config.min_bandwidth)
        x = good.sample(rng, config.n_candidates)
        cand[:, d] = x
        score += good.logpdf(x) - bad.logpdf(x)
    best = int(np.argmax(score))
    return {p.name: p.from_internal(cand[best, d]) for d, p in enumerate(space)}


@dataclass
class CalibrationResult:
    best: TrialRecord
    trials: list[TrialRecord] = field(default_factory=list)

    def convergence(self) -> dict:
        objective, running = [], []
        best = -math.inf
        for r in self.trials:
            v = r.objective if not r.failed else -math.inf
            best = max(best, v)
            objective.append(v if math.isfinite(v) else None)
            running.append(best if math.isfinite(best) else None)
        return {"trial": [r.trial_index for r in self.trials], "objective": objective,
                "running_best": running}

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.trials:
                fh.write(r.to_json() + "\n")

    def __iter__(self):
        # allows ``best, trials = calibrate(...)``
        return iter((self.best, self.trials))


def _score(objective: Callable[[Genome], float], genome: Genome) -> tuple:
    try:
        value = float(objective(genome))
    except Exception as exc:  # noqa: BLE001 - any objective failure is a failed trial
        return -math.inf, True, repr(exc)
    if not math.isfinite(value):
        return -math.inf, True, "non-finite objective"
    return value, False, ""


def calibrate(space: ParamSpace, objective: Callable[[Genome], float],
              config: TpeConfig = TpeConfig(),
              callback: Optional[Callable[[TrialRecord], None]] = None,
              jobs: int = 1) -> CalibrationResult:
    """Run ``n_random`` uniform trials then ``n_guided`` TPE trials; maximise ``objective``.

    An objective that raises or returns a non-finite value is recorded as a
    failed trial, scored -inf and left out of the density fits. With
    ``jobs > 1`` the random phase is evaluated in worker processes (the
    objective must be picklable); the trial sequence is the same either way.
    """
    rng = np.random.default_rng(config.seed)
    trials: list[TrialRecord] = []

    def record(genome: Genome, phase: str, scored: tuple) -> None:
        value, failed, err = scored
        if failed:
            log.warning("trial %d failed: %s", len(trials), err)
        rec = TrialRecord(len(trials), genome, value, phase, failed, err)
        trials.append(rec)
        if callback is not None:
            callback(rec)

    randoms = [sample_random(space, rng) for _ in range(config.n_random)]
    if jobs > 1 and len(randoms) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_score, [objective] * len(randoms), randoms))
    else:
        scores = None
    for i, genome in enumerate(randoms):
        record(genome, "random", scores[i] if scores is not None else _score(objective, genome))
    for _ in range(config.n_guided):
        genome = tpe_propose(trials, space, config, rng)
        record(genome, "guided", _score(objective, genome))

    best = trials[0] if trials else None
    for r in trials[1:]:
        if r.objective > best.objective:
            best = r
    return CalibrationResult(best, trials)
