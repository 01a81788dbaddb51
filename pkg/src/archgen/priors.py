"""Random-graph priors mapped onto attributed DAGs, and the explorer schedule."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import ArchGraph, from_adjacency
from .space import SpaceSpec

PRIOR = "prior"
GENERATOR = "generator"


def _sample_ops(n: int, space: SpaceSpec, rng: np.random.Generator) -> list:
    ops = rng.integers(0, space.d_ops, size=n).tolist()
    for idx, op in space.forced_ops(n).items():
        ops[idx] = op
    return ops


def er_dag_sample(n: int, p: float, space: SpaceSpec, rng: np.random.Generator) -> ArchGraph:
    """Each lower-triangular entry present independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    adj = np.zeros((n, n), dtype=np.bool_)
    rows, cols = np.tril_indices(n, -1)
    adj[rows, cols] = rng.random(rows.size) < p
    return from_adjacency(adj, _sample_ops(n, space, rng), space.roles)


def ws_dag_sample(n: int, k: int, p_rewire: float, space: SpaceSpec, rng: np.random.Generator) -> ArchGraph:
    """Watts-Strogatz ring lattice with rewiring, oriented low -> high index."""
    if k % 2 or k < 0:
        raise ValueError(f"k must be a non-negative even integer, got {k}")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than n={n}")
    if not 0.0 <= p_rewire <= 1.0:
        raise ValueError(f"p_rewire must lie in [0, 1], got {p_rewire}")
    nbrs = [set() for _ in range(n)]
    for u in range(n):
        for j in range(1, k // 2 + 1):
            v = (u + j) % n
            nbrs[u].add(v)
            nbrs[v].add(u)
    for j in range(1, k // 2 + 1):
        for u in range(n):
            v = (u + j) % n
            if v not in nbrs[u] or rng.random() >= p_rewire:
                continue
            free = [w for w in range(n) if w != u and w not in nbrs[u]]
            if not free:
                continue
            w = free[int(rng.integers(len(free)))]
            nbrs[u].discard(v)
            nbrs[v].discard(u)
            nbrs[u].add(w)
            nbrs[w].add(u)
    adj = np.zeros((n, n), dtype=np.bool_)
    for u in range(n):
        for v in nbrs[u]:
            if u > v:
                adj[u, v] = True
    return from_adjacency(adj, _sample_ops(n, space, rng), space.roles)


@dataclass(frozen=True)
class PriorSpec:
    kind: str = "erdos-renyi"
    p: float = 0.25
    k: int = 4
    p_rewire: float = 0.25

    def __post_init__(self):
        if self.kind not in ("erdos-renyi", "watts-strogatz"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0 or not 0.0 <= self.p_rewire <= 1.0:
            raise ValueError("prior probabilities must lie in [0, 1]")
        if self.kind == "watts-strogatz" and self.k % 2:
            raise ValueError("watts-strogatz k must be even")

    def sample(self, space: SpaceSpec, rng: np.random.Generator) -> ArchGraph:
        if self.kind == "erdos-renyi":
            return er_dag_sample(space.n_nodes, self.p, space, rng)
        return ws_dag_sample(space.n_nodes, self.k, self.p_rewire, space, rng)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpsilonSchedule:
    kind: str = "linear-anneal"
    eps_start: float = 1.0
    anneal_steps: int = 30

    def __post_init__(self):
        if self.kind not in ("linear-anneal", "step-cutoff", "constant"):
            raise ValueError(f"unknown epsilon schedule {self.kind!r}")
        if not 0.0 <= self.eps_start <= 1.0:
            raise ValueError("eps_start must lie in [0, 1]")
        if self.anneal_steps < 0:
            raise ValueError("anneal_steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def epsilon_at(schedule: EpsilonSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.kind == "constant":
        return schedule.eps_start
    if schedule.kind == "step-cutoff":
        return schedule.eps_start if step < schedule.anneal_steps else 0.0
    if schedule.anneal_steps == 0:
        return 0.0
    return max(0.0, schedule.eps_start * (1.0 - step / schedule.anneal_steps))


def choose_source(rng: np.random.Generator, eps: float) -> str:
    return PRIOR if rng.random() < eps else GENERATOR
