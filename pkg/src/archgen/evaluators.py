"""Architecture evaluators: tabular lookup, synthetic landscapes, caching and budgets."""
from __future__ import annotations

import hashlib
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .graph import (
    ArchGraph, GraphFormatError, avg_shortest_path, canonical_hash, density, from_adjacency, from_record, space_size,
    to_record,
)
from .priors import er_dag_sample
from .space import SpaceSpec, draw_valid, enumerate_space, postprocess

UNITS = ("evaluations", "cost")
LANDSCAPES = ("planted-stats", "hashed-random")


@dataclass(frozen=True)
class EvalResult:
    reward: float
    cost: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward}")
        if not (math.isfinite(self.cost) and self.cost >= 0):
            raise ValueError(f"cost must be finite and >= 0, got {self.cost}")


class TabularMiss(LookupError):
    """The queried graph is absent from the table."""


class TabularFormatError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class Evaluator:
    fidelity = "full"

    def __call__(self, g: ArchGraph) -> EvalResult:
        return self.evaluate(g)

    def evaluate(self, g: ArchGraph) -> EvalResult:
        raise NotImplementedError


# --- tabular -------------------------------------------------------------------

@dataclass(frozen=True)
class TableEntry:
    graph: ArchGraph
    reward: float
    test_reward: Optional[float]
    cost: float

    def to_record(self) -> dict:
        return {"graph": to_record(self.graph), "reward": self.reward,
                "test_reward": self.test_reward, "cost": self.cost}


class TabularEvaluator(Evaluator):
    """Exact lookup keyed by canonical hash."""

    def __init__(self, entries: Sequence[TableEntry] = (), fidelity: str = "full"):
        self.fidelity = fidelity
        self._table: Dict[str, TableEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: TableEntry):
        key = canonical_hash(entry.graph)
        if key in self._table:
            raise ValueError(f"duplicate table entry for graph {key[:12]}")
        self._table[key] = entry

    def __len__(self):
        return len(self._table)

    def __contains__(self, g: ArchGraph):
        return canonical_hash(g) in self._table

    def entries(self) -> List[TableEntry]:
        return list(self._table.values())

    def evaluate(self, g: ArchGraph) -> EvalResult:
        try:
            e = self._table[canonical_hash(g)]
        except KeyError:
            raise TabularMiss(f"graph {canonical_hash(g)[:12]} not in table") from None
        return EvalResult(e.reward, e.cost)


def _parse_entry(rec, d_ops) -> TableEntry:
    if not isinstance(rec, dict):
        raise ValueError("expected an object")
    unknown = set(rec) - {"graph", "reward", "test_reward", "cost"}
    if unknown:
        raise ValueError(f"unknown field {sorted(unknown)[0]!r}")
    for key in ("graph", "reward"):
        if key not in rec:
            raise ValueError(f"missing field {key!r}")
    g = from_record(rec["graph"], d_ops=d_ops)
    reward = float(rec["reward"])
    test = rec.get("test_reward")
    cost = float(rec.get("cost", 1.0))
    EvalResult(reward, cost)
    return TableEntry(g, reward, None if test is None else float(test), cost)


def tabular_load(path, d_ops: Optional[int] = None, fidelity: str = "full") -> TabularEvaluator:
    ev = TabularEvaluator(fidelity=fidelity)
    first_line: Dict[str, int] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entry = _parse_entry(json.loads(line), d_ops)
            except json.JSONDecodeError as exc:
                raise TabularFormatError(lineno, f"malformed record: {exc}") from None
            except (GraphFormatError, ValueError, TypeError) as exc:
                raise TabularFormatError(lineno, str(exc)) from None
            key = canonical_hash(entry.graph)
            if key in first_line:
                raise TabularFormatError(lineno, f"duplicate graph (first listed on line {first_line[key]})")
            first_line[key] = lineno
            ev.add(entry)
    return ev


def tabular_dump(evaluator: TabularEvaluator, path) -> None:
    with open(path, "w") as fh:
        for e in evaluator.entries():
            fh.write(json.dumps(e.to_record()) + "\n")


def tabulate(evaluator: Evaluator, graphs) -> TabularEvaluator:
    """Freeze any evaluator into a table over ``graphs``."""
    out = TabularEvaluator(fidelity=evaluator.fidelity)
    for g in graphs:
        r = evaluator.evaluate(g)
        out.add(TableEntry(g, r.reward, None, r.cost))
    return out


# --- synthetic landscapes ------------------------------------------------------

def _hash_unit(seed: int, key: str) -> float:
    digest = hashlib.sha256(f"{seed}|{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


def target_op_fraction(g: ArchGraph, space: SpaceSpec, target_op: int) -> float:
    forced = space.forced_ops(g.n_nodes)
    free = [op for i, op in enumerate(g.node_ops) if i not in forced]
    return sum(op == target_op for op in free) / len(free) if free else 0.0


def _random_valid(space: SpaceSpec, rng: np.random.Generator) -> ArchGraph:
    if space_size(space.n_nodes, space.d_ops) <= 100_000:
        graphs = list(enumerate_space(space))
        return graphs[int(rng.integers(len(graphs)))]
    return draw_valid(lambda: er_dag_sample(space.n_nodes, 0.5, space, rng), space, 10_000).graph


class SyntheticEvaluator(Evaluator):
    """Closed-form reward with a known global optimum.

    ``planted-stats`` scores closeness to a target average path length,
    edge density and op composition; ``hashed-random`` assigns each graph an
    independent pseudo-random value in [0, 1) except the planted optimum,
    which scores exactly 1.
    """

    def __init__(self, space: SpaceSpec, kind: str = "hashed-random", seed: int = 0, *,
                 optimum: Optional[ArchGraph] = None, tau: Optional[float] = None, rho: Optional[float] = None,
                 target_op: Optional[int] = None, weights=(0.4, 0.3, 0.3), cost: float = 1.0,
                 fidelity: str = "full"):
        if kind not in LANDSCAPES:
            raise ValueError(f"unknown landscape {kind!r}; known: {list(LANDSCAPES)}")
        if len(weights) != 3 or any(w < 0 for w in weights):
            raise ValueError("weights must be three non-negative numbers")
        self.space, self.kind, self.seed = space, kind, seed
        self.weights = tuple(float(w) for w in weights)
        self.cost = float(cost)
        self.fidelity = fidelity
        rng = np.random.default_rng(seed)
        if kind == "planted-stats":
            self.target_op = int(rng.integers(space.d_ops)) if target_op is None else int(target_op)
            if not 0 <= self.target_op < space.d_ops:
                raise ValueError(f"target_op {self.target_op} out of range")
            if optimum is None and (tau is None or rho is None):
                optimum = self._plant(rng)
            if optimum is not None:
                optimum = postprocess(optimum, space)
                tau = avg_shortest_path(optimum) if tau is None else tau
                rho = density(optimum) if rho is None else rho
            if tau <= 0:
                raise ValueError("planted-stats needs a positive target path length")
            self.tau, self.rho = float(tau), float(rho)
        else:
            if optimum is None:
                optimum = _random_valid(space, rng)
            optimum = postprocess(optimum, space)
        self.optimum = optimum
        self._opt_key = None if optimum is None else canonical_hash(optimum)

    def _plant(self, rng) -> ArchGraph:
        while True:
            g = _random_valid(self.space, rng)
            if g.edge_count:
                break
        forced = self.space.forced_ops(g.n_nodes)
        ops = [forced.get(i, self.target_op) for i in range(g.n_nodes)]
        return from_adjacency(g.adjacency, ops, g.roles)

    def reward(self, g: ArchGraph) -> float:
        g = postprocess(g, self.space)
        if self.kind == "hashed-random":
            key = canonical_hash(g)
            return 1.0 if key == self._opt_key else _hash_unit(self.seed, key)
        w1, w2, w3 = self.weights
        r = (1.0 - w1 * abs(avg_shortest_path(g) - self.tau) / self.tau
             - w2 * abs(density(g) - self.rho)
             - w3 * (1.0 - target_op_fraction(g, self.space, self.target_op)))
        return min(1.0, max(0.0, r))

    def evaluate(self, g: ArchGraph) -> EvalResult:
        return EvalResult(self.reward(g), self.cost)

    def describe(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed,
               "optimum": None if self.optimum is None else to_record(self.optimum)}
        if self.kind == "planted-stats":
            out.update(tau=self.tau, rho=self.rho, target_op=self.target_op, weights=list(self.weights))
        return out


def synthetic_landscape(space: SpaceSpec, spec: dict) -> SyntheticEvaluator:
    spec = dict(spec)
    kind = spec.pop("kind", "hashed-random")
    seed = spec.pop("seed", 0)
    if spec.get("optimum") is not None and isinstance(spec["optimum"], dict):
        spec["optimum"] = from_record(spec["optimum"], d_ops=space.d_ops)
    return SyntheticEvaluator(space, kind, seed, **spec)


# --- budget and cache ----------------------------------------------------------

class BudgetExhausted(RuntimeError):
    pass


class BudgetMeter:
    def __init__(self, limit: float, unit: str = "evaluations"):
        if unit not in UNITS:
            raise ValueError(f"unknown budget unit {unit!r}")
        if not limit >= 0:
            raise ValueError("budget limit must be >= 0")
        self.limit = float(limit)
        self.unit = unit
        self.consumed = 0.0

    def price(self, result: EvalResult) -> float:
        return 1.0 if self.unit == "evaluations" else result.cost

    def charge(self, amount: float):
        if self.consumed + amount > self.limit:
            raise BudgetExhausted(f"charging {amount} would exceed the budget ({self.consumed}/{self.limit} {self.unit})")
        self.consumed += amount

    @property
    def exhausted(self) -> bool:
        return self.consumed >= self.limit

    def to_dict(self) -> dict:
        return {"limit": self.limit, "unit": self.unit, "consumed": self.consumed}

    @classmethod
    def from_dict(cls, d: dict) -> "BudgetMeter":
        m = cls(d["limit"], d["unit"])
        m.consumed = d["consumed"]
        return m


class CachedEvaluator(Evaluator):
    """Cache by canonical hash and charge a meter for fresh evaluations.

    With ``charge_cached`` every query is billed, repeats included; the
    cached result is still returned without re-running the evaluator.
    """

    def __init__(self, inner: Evaluator, meter: BudgetMeter, charge_cached: bool = False):
        self.inner = inner
        self.meter = meter
        self.charge_cached = charge_cached
        self.fidelity = inner.fidelity
        self.cache: Dict[str, EvalResult] = {}
        self._lock = threading.Lock()

    def query(self, g: ArchGraph, result: Optional[EvalResult] = None) -> Tuple[EvalResult, bool]:
        """(result, fresh). ``result`` lets a caller pass a precomputed inner value."""
        key = canonical_hash(g)
        with self._lock:
            hit = self.cache.get(key)
            if hit is not None:
                if self.charge_cached:
                    self.meter.charge(self.meter.price(hit))
                return hit, False
        if result is None:
            result = self.inner.evaluate(g)
        with self._lock:
            if key in self.cache:
                if self.charge_cached:
                    self.meter.charge(self.meter.price(self.cache[key]))
                return self.cache[key], False
            self.meter.charge(self.meter.price(result))
            self.cache[key] = result
        return result, True

    def evaluate(self, g: ArchGraph) -> EvalResult:
        return self.query(g)[0]

    def prefetch(self, graphs: Sequence[ArchGraph], workers: int) -> List[object]:
        """Inner results (or raised exceptions) for uncached graphs, computed concurrently.

        Nothing is cached or charged; pass each value back through ``query``
        in submission order.
        """
        def run(g):
            if canonical_hash(g) in self.cache:
                return None
            try:
                return self.inner.evaluate(g)
            except Exception as exc:  # handed back to the caller
                return exc
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, graphs))

    def cache_dict(self) -> dict:
        return {k: [v.reward, v.cost] for k, v in self.cache.items()}

    def load_cache(self, d: dict):
        self.cache = {k: EvalResult(r, c) for k, (r, c) in d.items()}


def with_cache_and_budget(evaluator: Evaluator, meter: BudgetMeter, charge_cached: bool = False) -> CachedEvaluator:
    return CachedEvaluator(evaluator, meter, charge_cached)
