"""Population engine: MAP-Elites grid, island ring, elite archive, mutators.

One evolution step samples a parent (uniform island, then rank-weighted
within it), gathers inspirations (global best, recent top performers,
random grid occupants), asks a mutator for a child, evaluates it on the
in-sample split and inserts it. Every ``migration_period`` generations each
island copies its best ``migration_rate`` fraction to its ring neighbour.

Out-of-sample scores are kept in :attr:`RunRecord.oos`, keyed by candidate
id. :class:`Candidate` has no field for them, so nothing that selects,
samples or archives can read them.
"""
from __future__ import annotations

import json
import logging
import math
import re
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np

from .calibration import ParamSpace

log = logging.getLogger(__name__)

Payload = Union[dict, str]  # genome, or program text from an external mutator

_CONST_RE = re.compile(r"^([A-Z][A-Z0-9_]*)\s*(?::[^=]+)?=(?!=)", re.MULTILINE)


@dataclass
class Candidate:
    id: int
    payload: Payload
    parent_id: Optional[int]
    generation: int
    depth: int
    mutator_tag: str
    island: int = 0
    fitness: Optional[float] = None  # after any budget penalty; None when failed
    raw_fitness: Optional[float] = None
    descriptor: tuple = ()
    cell: tuple = ()
    budget_count: int = 0
    error: str = ""

    @property
    def failed(self) -> bool:
        return self.fitness is None

    @property
    def genome(self) -> Optional[dict]:
        return self.payload if isinstance(self.payload, dict) else None


# ---------------------------------------------------------------------------
# Parameter budget

@dataclass(frozen=True)
class BudgetResult:
    ok: bool
    count: int


def count_parameters(payload: Payload) -> int:
    """Genome keys, or distinct module-level UPPER_CASE assignments in program text."""
    if isinstance(payload, dict):
        return len(payload)
    return len(set(_CONST_RE.findall(payload)))


def check_budget(payload: Payload, cap: int = 18) -> BudgetResult:
    n = count_parameters(payload)
    return BudgetResult(n <= cap, n)


def apply_budget_penalty(fitness: float, factor: float) -> float:
    """Multiplicative haircut that always lowers the score (divides losses)."""
    return fitness * factor if fitness >= 0 else fitness / factor


# ---------------------------------------------------------------------------
# Population structures

@dataclass
class MapElitesGrid:
    bins: tuple = (8, 8, 8)
    complexity_max: float = 36.0
    cells: dict = field(default_factory=dict)
    fit_lo: float = math.inf
    fit_hi: float = -math.inf

    def cell_for(self, descriptor: tuple) -> tuple:
        complexity, diversity, fitness = descriptor
        nc, nd, ns = self.bins
        c = min(nc - 1, int(nc * min(max(complexity, 0.0), self.complexity_max) / (self.complexity_max + 1e-9)))
        d = min(nd - 1, max(0, int(nd * diversity)))
        # score bins follow the running fitness range
        lo, hi = min(self.fit_lo, fitness), max(self.fit_hi, fitness)
        s = 0 if hi <= lo else min(ns - 1, int(ns * (fitness - lo) / (hi - lo)))
        return (c, d, s)

    def observe(self, fitness: float) -> None:
        self.fit_lo = min(self.fit_lo, fitness)
        self.fit_hi = max(self.fit_hi, fitness)

    def offer(self, cand: Candidate) -> bool:
        """Place ``cand`` in its cell if empty or strictly better than the occupant."""
        cur = self.cells.get(cand.cell)
        if cur is None or cand.fitness > cur.fitness:
            self.cells[cand.cell] = cand
            return True
        return False

    def occupants(self) -> list[Candidate]:
        return list(self.cells.values())


@dataclass
class IslandSet:
    n_islands: int = 5
    migration_period: int = 5
    migration_rate: float = 0.10
    members: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            self.members = [[] for _ in range(self.n_islands)]

    def neighbour(self, i: int) -> int:
        return (i + 1) % self.n_islands

    def add(self, cand: Candidate, island: int) -> None:
        if all(c.id != cand.id for c in self.members[island]):
            self.members[island].append(cand)

    def population(self) -> list[Candidate]:
        seen, out = set(), []
        for isl in self.members:
            for c in isl:
                if c.id not in seen:
                    seen.add(c.id)
                    out.append(c)
        return out

    def __len__(self) -> int:
        return sum(len(m) for m in self.members)


def _key(genome: dict, name: str) -> str:
    """Genome key for a space parameter; genomes may use UPPER_CASE constant names."""
    return name if name in genome else name.upper()


def _unit(space: ParamSpace, genome: dict) -> np.ndarray:
    return np.array([(p.to_internal(genome[_key(genome, p.name)]) - p.lo) / (p.hi - p.lo) for p in space])


def _rank_key(c: Candidate):
    return (-c.fitness, c.id)


@dataclass
class EliteArchive:
    capacity: int = 50
    members: list = field(default_factory=list)

    def offer(self, cand: Candidate) -> Optional[Candidate]:
        """Insert if it belongs in the top ``capacity``; returns the evicted member, if any."""
        if any(m.id == cand.id for m in self.members):
            return None
        self.members.append(cand)
        self.members.sort(key=_rank_key)
        if len(self.members) > self.capacity:
            return self.members.pop()
        return None

    @property
    def best(self) -> Optional[Candidate]:
        return self.members[0] if self.members else None


# ---------------------------------------------------------------------------
# Sampling

def sample_parent(islands: IslandSet, rng: np.random.Generator, exploit_temp: float = 0.5) -> Candidate:
    """Uniform island, then exponential rank weighting inside it.

    Weight of the candidate at rank r (0 = best) among n is
    ``exp(-r / ((n - 1) * exploit_temp))``; large temperatures tend to uniform.
    """
    return _sample_parent(islands, rng, exploit_temp)[0]


def _sample_parent(islands: IslandSet, rng: np.random.Generator, exploit_temp: float):
    nonempty = [i for i, m in enumerate(islands.members) if m]
    if not nonempty:
        raise ValueError("cannot sample a parent from an empty population")
    idx = nonempty[int(rng.integers(len(nonempty)))]
    ranked = sorted(islands.members[idx], key=_rank_key)
    n = len(ranked)
    if n == 1:
        return ranked[0], idx
    if math.isinf(exploit_temp):
        w = np.ones(n)
    else:
        w = np.exp(-np.arange(n) / ((n - 1) * exploit_temp))
    return ranked[int(rng.choice(n, p=w / w.sum()))], idx


def sample_inspirations(grid: MapElitesGrid, archive: EliteArchive, rng: np.random.Generator,
                        k: int = 4, recent: Sequence[Candidate] = (), recent_window: int = 20) -> list[Candidate]:
    """Global best, then alternating recent top performers and random grid occupants."""
    if k <= 0:
        return []
    out: list[Candidate] = []
    ids: set = set()

    def take(c: Candidate) -> None:
        if c is not None and c.id not in ids and len(out) < k:
            out.append(c)
            ids.add(c.id)

    if archive.best is None:
        return out
    take(archive.best)
    pool_recent = sorted((c for c in list(recent)[-recent_window:] if not c.failed), key=_rank_key)
    occupied = sorted(grid.cells)
    diverse = [grid.cells[occupied[i]] for i in rng.permutation(len(occupied))]
    ri = di = 0
    turn = 0
    while len(out) < k and (ri < len(pool_recent) or di < len(diverse)):
        if (turn % 2 == 0 and ri < len(pool_recent)) or di >= len(diverse):
            take(pool_recent[ri])
            ri += 1
        else:
            take(diverse[di])
            di += 1
        turn += 1
    return out


# ---------------------------------------------------------------------------
# Mutators

class Mutator(Protocol):
    name: str

    def propose(self, parent: Candidate, inspirations: Sequence[Candidate],
                rng: np.random.Generator) -> Payload: ...


class PerturbMutator:
    """Crossover-then-Gaussian perturbation in bounds-scaled coordinates.

    With probability ``p_cross`` the child starts as the per-parameter mean
    of the parent and one random genome inspiration (mean taken on each
    parameter's own scale). Each parameter is then perturbed with
    probability ``p_mut`` by ``N(0, sigma_rel)`` in units of its range, and
    clipped. At least one parameter is perturbed when ``sigma_rel > 0``.
    """

    def __init__(self, space: ParamSpace, name: str = "perturb", p_cross: float = 0.0,
                 p_mut: float = 0.25, sigma_rel: float = 0.1):
        self.space = space
        self.name = name
        self.p_cross = p_cross
        self.p_mut = p_mut
        self.sigma_rel = sigma_rel

    def propose(self, parent, inspirations, rng):
        genome = dict(parent.genome)
        params = list(self.space)
        unit = {p.name: (p.to_internal(genome[_key(genome, p.name)]) - p.lo) / (p.hi - p.lo) for p in params}
        changed: set = set()

        mates = [c for c in inspirations if c.genome is not None and c.id != parent.id]
        if self.p_cross > 0 and mates and rng.random() < self.p_cross:
            mate = mates[int(rng.integers(len(mates)))].genome
            for p in params:
                other = (p.to_internal(mate[_key(mate, p.name)]) - p.lo) / (p.hi - p.lo)
                if other != unit[p.name]:
                    unit[p.name] = 0.5 * (unit[p.name] + other)
                    changed.add(p.name)

        if self.sigma_rel > 0:
            picks = [p.name for p in params if rng.random() < self.p_mut]
            if not picks:
                picks = [params[int(rng.integers(len(params)))].name]
            for name in picks:
                unit[name] = min(max(unit[name] + rng.normal(0.0, self.sigma_rel), 0.0), 1.0)
                changed.add(name)

        for p in params:
            if p.name in changed:
                genome[_key(genome, p.name)] = p.from_internal(p.lo + unit[p.name] * (p.hi - p.lo))
        return genome


def perturb_mutator(parent: Candidate, inspirations: Sequence[Candidate], rng: np.random.Generator,
                    space: ParamSpace, p_cross: float = 0.0, p_mut: float = 0.25,
                    sigma_rel: float = 0.1) -> dict:
    return PerturbMutator(space, "perturb", p_cross, p_mut, sigma_rel).propose(parent, inspirations, rng)


def default_mutators(space: ParamSpace) -> list[tuple[Mutator, float]]:
    """70% local perturbation, 30% crossover-plus-perturbation."""
    return [(PerturbMutator(space, "perturb", p_cross=0.0), 0.7),
            (PerturbMutator(space, "crossover", p_cross=1.0), 0.3)]


class SubprocessMutator:
    """Delegates proposals to an external command.

    The command gets ``{"parent": ..., "inspirations": [...], "seed": int}``
    as JSON on stdin and must print ``{"genome": {...}}`` or
    ``{"text": "...", "descriptor": [complexity, diversity]}``.
    """

    def __init__(self, command: Sequence[str], name: str = "external", timeout: float = 300.0):
        self.command = list(command)
        self.name = name
        self.timeout = timeout
        self.last_descriptor: Optional[tuple] = None

    @staticmethod
    def encode(c: Candidate) -> dict:
        return {"id": c.id, "fitness": c.fitness, "generation": c.generation,
                "genome": c.genome, "text": c.payload if isinstance(c.payload, str) else None}

    def propose(self, parent, inspirations, rng):
        msg = {"parent": self.encode(parent), "inspirations": [self.encode(c) for c in inspirations],
               "seed": int(rng.integers(2 ** 31))}
        proc = subprocess.run(self.command, input=json.dumps(msg), capture_output=True, text=True,
                              timeout=self.timeout, check=True)
        out = json.loads(proc.stdout)
        desc = out.get("descriptor")
        self.last_descriptor = tuple(desc) if desc is not None else None
        if "genome" in out:
            return dict(out["genome"])
        return str(out["text"])


# ---------------------------------------------------------------------------
# Evolution loop

@dataclass(frozen=True)
class EvolutionConfig:
    generations: int = 40
    batch_size: int = 5
    n_islands: int = 5
    migration_period: int = 5
    migration_rate: float = 0.10
    archive_capacity: int = 50
    grid_bins: tuple = (8, 8, 8)
    exploit_temp: float = 0.5
    n_inspirations: int = 4
    recent_window: int = 20
    budget_cap: int = 18
    budget_penalty: float = 0.5
    seed: int = 0

    @classmethod
    def from_dict(cls, d) -> "EvolutionConfig":
        d = dict(d or {})
        if "grid_bins" in d:
            d["grid_bins"] = tuple(d["grid_bins"])
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class RunRecord:
    candidates: list = field(default_factory=list)
    oos: dict = field(default_factory=dict)  # id -> out-of-sample fitness
    insert_log: list = field(default_factory=list)
    migrations: list = field(default_factory=list)

    def by_id(self) -> dict:
        return {c.id: c for c in self.candidates}

    def best(self) -> Optional[Candidate]:
        ok = [c for c in self.candidates if not c.failed]
        return min(ok, key=_rank_key) if ok else None

    def cumulative_best(self) -> dict:
        """Running maximum of IS fitness and, independently, of OOS fitness."""
        is_curve, oos_curve = [], []
        bi = bo = -math.inf
        for c in self.candidates:
            if not c.failed:
                bi = max(bi, c.fitness)
            o = self.oos.get(c.id)
            if o is not None and math.isfinite(o):
                bo = max(bo, o)
            is_curve.append(bi if math.isfinite(bi) else None)
            oos_curve.append(bo if math.isfinite(bo) else None)
        return {"is": is_curve, "oos": oos_curve}

    def lineage(self, cid: Optional[int] = None) -> list[Candidate]:
        """Ancestry chain from the seed to ``cid`` (default: best candidate)."""
        ids = self.by_id()
        c = ids[cid] if cid is not None else self.best()
        chain = []
        while c is not None:
            chain.append(c)
            c = ids.get(c.parent_id) if c.parent_id is not None else None
        return chain[::-1]

    def to_records(self) -> list[dict]:
        out = []
        for c in self.candidates:
            d = {
                "id": c.id, "parent": c.parent_id, "generation": c.generation, "depth": c.depth,
                "mutator_tag": c.mutator_tag, "island": c.island,
                "genome": c.genome, "text": c.payload if isinstance(c.payload, str) else None,
                "is_fitness": c.fitness, "raw_fitness": c.raw_fitness,
                "oos_fitness": self.oos.get(c.id),
                "descriptor": list(c.descriptor), "cell": list(c.cell),
                "budget_count": c.budget_count, "error": c.error, "eval_index": c.id,
            }
            out.append(d)
        return out

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(_finite(rec)) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "RunRecord":
        rec = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                payload = d["genome"] if d.get("genome") is not None else d.get("text", "")
                c = Candidate(d["id"], payload, d["parent"], d["generation"], d.get("depth", 0),
                              d["mutator_tag"], d.get("island", 0), d["is_fitness"], d.get("raw_fitness"),
                              tuple(d.get("descriptor") or ()), tuple(d.get("cell") or ()),
                              d.get("budget_count", 0), d.get("error", ""))
                rec.candidates.append(c)
                if d.get("oos_fitness") is not None:
                    rec.oos[c.id] = d["oos_fitness"]
        return rec


def _finite(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


class Population:
    """Grid, islands and archive behind a single writer (:meth:`insert`)."""

    def __init__(self, config: EvolutionConfig, space: Optional[ParamSpace] = None,
                 seed_payload: Optional[Payload] = None):
        self.config = config
        self.space = space
        self.grid = MapElitesGrid(tuple(config.grid_bins), complexity_max=2.0 * config.budget_cap)
        self.islands = IslandSet(config.n_islands, config.migration_period, config.migration_rate)
        self.archive = EliteArchive(config.archive_capacity)
        self.seed_unit = None
        if space is not None and isinstance(seed_payload, dict):
            self.seed_unit = _unit(space, seed_payload)

    def descriptor(self, cand: Candidate, external: Optional[tuple] = None) -> tuple:
        """(parameter count, distance from the seed in [0, 1], fitness)."""
        if external is not None and len(external) >= 2:
            return (float(external[0]), float(external[1]), cand.fitness)
        diversity = 0.0
        if self.seed_unit is not None and cand.genome is not None:
            u = _unit(self.space, cand.genome)
            diversity = float(np.linalg.norm(u - self.seed_unit) / math.sqrt(len(u)))
        return (float(cand.budget_count), diversity, cand.fitness)

    def insert(self, cand: Candidate, islands: Sequence[int], external_descriptor=None) -> dict:
        report = {"id": cand.id, "failed": cand.failed, "cell": None, "grid_replaced": False,
                  "archived": False, "evicted": None}
        if cand.failed:
            return report
        cand.descriptor = self.descriptor(cand, external_descriptor)
        cand.cell = self.grid.cell_for(cand.descriptor)
        self.grid.observe(cand.fitness)
        report["cell"] = cand.cell
        report["grid_replaced"] = self.grid.offer(cand)
        for i in islands:
            self.islands.add(cand, i)
        evicted = self.archive.offer(cand)
        report["archived"] = any(m.id == cand.id for m in self.archive.members)
        report["evicted"] = evicted.id if evicted is not None else None
        return report

    def migrate(self, generation: int) -> dict:
        """Each island copies its best ``max(1, floor(rate * size))`` members to its ring neighbour."""
        cfg = self.islands
        sent = []
        snapshot = [sorted(m, key=_rank_key) for m in cfg.members]
        for i, ranked in enumerate(snapshot):
            if not ranked:
                sent.append([])
                continue
            n = max(1, int(math.floor(cfg.migration_rate * len(ranked) + 1e-9)))
            movers = ranked[:n]
            for c in movers:
                cfg.add(c, cfg.neighbour(i))
            sent.append([c.id for c in movers])
        return {"generation": generation, "sizes": [len(m) for m in snapshot], "sent": sent}


def _evaluate(fn: Callable[[Payload], float], payload: Payload):
    try:
        v = float(fn(payload))
    except Exception as exc:  # noqa: BLE001 - evaluator failures become failed candidates
        return None, repr(exc)
    if not math.isfinite(v):
        return None, "non-finite fitness"
    return v, ""


def _map(fn, payloads: list, jobs: int) -> list:
    if jobs <= 1 or len(payloads) <= 1:
        return [_evaluate(fn, p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate, [fn] * len(payloads), payloads))


def evolve(config: EvolutionConfig, evaluator: Callable[[Payload], float],
           mutators: Sequence, seed_payload: Payload, space: Optional[ParamSpace] = None,
           oos_evaluator: Optional[Callable[[Payload], float]] = None,
           progress: Optional[Callable[[Candidate], None]] = None, jobs: int = 1) -> RunRecord:
    """Evolve from ``seed_payload`` for ``config.generations`` generations.

    ``mutators`` is a sequence of mutators or ``(mutator, weight)`` pairs.
    Each generation proposes ``batch_size`` children from the population as
    it stood at the start of the generation, evaluates them (in ``jobs``
    worker processes when > 1, which needs picklable evaluators) and inserts
    them in proposal order, so the record does not depend on ``jobs``.
    ``oos_evaluator`` results are stored on the record only.
    """
    rng = np.random.default_rng(config.seed)
    pairs = [(m, 1.0) if not isinstance(m, tuple) else m for m in mutators]
    if not pairs:
        raise ValueError("at least one mutator is required")
    weights = np.array([w for _, w in pairs], dtype=float)
    weights = weights / weights.sum()

    pop = Population(config, space, seed_payload)
    record = RunRecord()

    def settle(batch: list, results: list, oos_results: list) -> None:
        for (cand, islands, external), (raw, err), oos in zip(batch, results, oos_results):
            budget = check_budget(cand.payload, config.budget_cap)
            cand.budget_count = budget.count
            cand.raw_fitness = raw
            cand.error = err
            if raw is not None:
                cand.fitness = raw if budget.ok else apply_budget_penalty(raw, config.budget_penalty)
            record.candidates.append(cand)
            record.insert_log.append(pop.insert(cand, islands, external))
            if oos_evaluator is not None:
                record.oos[cand.id] = oos[0]
            if progress is not None:
                progress(cand)

    def run_batch(batch: list) -> None:
        payloads = [b[0].payload for b in batch]
        results = _map(evaluator, payloads, jobs)
        oos = _map(oos_evaluator, payloads, jobs) if oos_evaluator is not None else [None] * len(batch)
        settle(batch, results, oos)

    seed = Candidate(0, seed_payload, None, 0, 0, "seed")
    run_batch([(seed, range(config.n_islands), None)])
    if seed.failed:
        raise RuntimeError(f"seed candidate failed to evaluate: {seed.error}")

    next_id = 1
    for gen in range(1, config.generations + 1):
        batch = []
        for _ in range(config.batch_size):
            parent, island = _sample_parent(pop.islands, rng, config.exploit_temp)
            insp = sample_inspirations(pop.grid, pop.archive, rng, config.n_inspirations,
                                       record.candidates, config.recent_window)
            mutator = pairs[int(rng.choice(len(pairs), p=weights))][0]
            payload = mutator.propose(parent, insp, rng)
            external = getattr(mutator, "last_descriptor", None)
            child = Candidate(next_id, payload, parent.id, gen, parent.depth + 1,
                              mutator.name, island)
            next_id += 1
            batch.append((child, [island], external))
        run_batch(batch)
        if gen % config.migration_period == 0:
            record.migrations.append(pop.migrate(gen))
    record.population = pop
    return record


def mutator_stats(record: RunRecord, top_k: int = 20) -> dict:
    """Improvement rate, top-k appearances and best-lineage steps per mutator tag."""
    ids = record.by_id()
    stats: dict = {}
    for c in record.candidates:
        if c.parent_id is None:
            continue
        s = stats.setdefault(c.mutator_tag, {"children": 0, "improved": 0, "failed": 0,
                                             "top_k": 0, "lineage_steps": 0})
        s["children"] += 1
        parent = ids.get(c.parent_id)
        if c.failed:
            s["failed"] += 1
        elif parent is not None and not parent.failed and c.fitness > parent.fitness:
            s["improved"] += 1
    ranked = sorted((c for c in record.candidates if not c.failed), key=_rank_key)[:top_k]
    for c in ranked:
        if c.mutator_tag in stats:
            stats[c.mutator_tag]["top_k"] += 1
    chain = record.lineage() if record.best() is not None else []
    for c in chain[1:]:
        if c.mutator_tag in stats:
            stats[c.mutator_tag]["lineage_steps"] += 1
    for s in stats.values():
        s["improvement_rate"] = s["improved"] / s["children"] if s["children"] else 0.0
    return {"per_mutator": stats, "lineage": [c.id for c in chain], "lineage_length": len(chain) - 1
            if chain else 0}
