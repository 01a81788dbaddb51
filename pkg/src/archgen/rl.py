"""Replay buffer, reward standardisation and the reweighted REINFORCE update."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .graph import ArchGraph, canonical_hash, from_record, to_record
from .tensor import AdamState, Tape, adam_step, gather, log1mexp, log1mexp_t, mul, scale, sum_, add

SIGMA_FLOOR = 1e-8


@dataclass
class SampleRecord:
    graph: ArchGraph
    reward: float
    source: str
    step: int
    eval_id: int
    raw: Optional[ArchGraph] = None  # pre-pruning graph the generator scores

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward}")

    @property
    def key(self) -> str:
        return canonical_hash(self.graph)

    @property
    def train_graph(self) -> ArchGraph:
        return self.raw if self.raw is not None else self.graph

    def rank(self):
        return (-self.reward, self.eval_id)

    def to_dict(self) -> dict:
        return {
            "graph": to_record(self.graph), "reward": self.reward, "source": self.source,
            "step": self.step, "eval_id": self.eval_id,
            "raw": None if self.raw is None else to_record(self.raw),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleRecord":
        return cls(from_record(d["graph"]), d["reward"], d["source"], d["step"], d["eval_id"],
                   None if d["raw"] is None else from_record(d["raw"]))


class ReplayBuffer:
    """Top-``capacity`` distinct graphs by reward.

    The best record ever inserted for each graph is remembered, so the
    contents always equal sort-and-truncate over everything inserted, even
    after the capacity changes.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._best: Dict[str, SampleRecord] = {}
        self._order: List[tuple] = []  # sorted (rank, key)

    def __len__(self):
        return min(self.capacity, len(self._order))

    @property
    def records(self) -> List[SampleRecord]:
        return [self._best[k] for _, k in self._order[:self.capacity]]

    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records])

    def _top_keys(self):
        return {k for _, k in self._order[:self.capacity]}

    def insert(self, record: SampleRecord) -> List[SampleRecord]:
        """Insert and return whatever is no longer held (possibly ``record`` itself)."""
        key = record.key
        old = self._best.get(key)
        if old is not None and old.rank() <= record.rank():
            return [record]
        before = self._top_keys()
        if old is not None:
            self._order.pop(bisect.bisect_left(self._order, (old.rank(), key)))
        self._best[key] = record
        bisect.insort(self._order, (record.rank(), key))
        after = self._top_keys()
        evicted = [self._best[k] for k in before - after]
        if key not in after:
            evicted.append(record)
        elif old is not None and key in before:
            evicted.append(old)
        return sorted(evicted, key=SampleRecord.rank)

    def resize(self, capacity: int) -> List[SampleRecord]:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        before = self._top_keys()
        self.capacity = capacity
        return [self._best[k] for k in before - self._top_keys()]

    def best(self) -> Optional[SampleRecord]:
        return self._best[self._order[0][1]] if self._order else None

    def to_dict(self) -> dict:
        return {"capacity": self.capacity, "seen": [self._best[k].to_dict() for _, k in self._order]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayBuffer":
        buf = cls(d["capacity"])
        for rec in d["seen"]:
            buf.insert(SampleRecord.from_dict(rec))
        return buf


@dataclass(frozen=True)
class RewardStats:
    baseline: float
    sigma: float


def buffer_stats(buffer: ReplayBuffer) -> RewardStats:
    rewards = buffer.rewards()
    if rewards.size == 0:
        raise ValueError("empty replay buffer has no reward statistics")
    c = float(rewards.mean())
    sigma = float(np.sqrt(np.mean((rewards - c) ** 2)))
    return RewardStats(c, sigma if sigma >= SIGMA_FLOOR else 1.0)


def standardize_reward(reward: float, stats: RewardStats) -> float:
    return (reward - stats.baseline) / stats.sigma


def reweighted_loss(log_p: float, rbar: float, beta: float = 1.0) -> float:
    """Per-sample surrogate whose descent raises P for above-baseline graphs
    and lowers it (through ``log(1 - P)``) for the rest."""
    if log_p > 0:
        raise ValueError("log_p must be <= 0")
    if rbar > 0:
        return -rbar * log_p
    if rbar == 0:
        return 0.0
    return -abs(rbar) * beta * log1mexp(log_p)


@dataclass
class TrainerConfig:
    lr: float = 1e-4
    clip: float = 1.0
    minibatch: int = 16
    epochs: int = 2000
    beta: float = 1.0
    update_every: int = 16

    def __post_init__(self):
        if self.minibatch < 1 or self.update_every < 1 or self.epochs < 0:
            raise ValueError("minibatch and update_every must be >= 1, epochs >= 0")
        if self.lr <= 0 or self.clip <= 0 or self.beta < 0:
            raise ValueError("lr and clip must be positive, beta non-negative")


def batch_loss(log_p, rbar: np.ndarray, beta: float):
    """Mean surrogate over a minibatch of (B,) log-prob tensors; None if all weights vanish."""
    pos = np.flatnonzero(rbar > 0)
    neg = np.flatnonzero(rbar < 0)
    b = rbar.size
    total = None
    if pos.size:
        total = sum_(mul(gather(log_p, pos), -rbar[pos]))
    if neg.size:
        t = sum_(mul(log1mexp_t(gather(log_p, neg)), -beta * np.abs(rbar[neg])))
        total = t if total is None else add(total, t)
    return None if total is None else scale(total, 1.0 / b)


def train_update(generator, buffer: ReplayBuffer, opt_state: AdamState, cfg: TrainerConfig,
                 rng: np.random.Generator, stats: Optional[RewardStats] = None) -> dict:
    """Fit the generator to the frozen buffer snapshot for ``cfg.epochs`` epochs."""
    records = buffer.records
    if not records:
        raise ValueError("train_update needs a non-empty buffer")
    stats = stats if stats is not None else buffer_stats(buffer)
    rbar = np.array([standardize_reward(r.reward, stats) for r in records])
    graphs = [r.train_graph for r in records]
    opt_state.lr = cfg.lr
    losses, norm = [], 0.0
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(records))
        for start in range(0, len(records), cfg.minibatch):
            idx = perm[start:start + cfg.minibatch]
            with Tape() as tape:
                log_p = generator.log_prob_batch([graphs[i] for i in idx])
                loss = batch_loss(log_p, rbar[idx], cfg.beta)
            if loss is None:
                losses.append(0.0)
                continue
            grads = tape.backward(loss)
            norm = adam_step(generator.params, grads, opt_state, cfg.clip)
            losses.append(loss.item())
    return {
        "mean_loss": float(np.mean(losses)) if losses else 0.0,
        "grad_norm": norm,
        "epochs": cfg.epochs,
        "baseline": stats.baseline,
        "sigma": stats.sigma,
    }
