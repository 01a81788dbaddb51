"""Shared machinery for auto-regressive architecture generators."""
from __future__ import annotations

import json
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..graph import ArchGraph, GraphError, from_adjacency
from .._serial import decode_array, encode_array
from ..space import SpaceSpec
from ..tensor import Tensor, add, gather, glorot, reshape

FORMAT_VERSION = 1
# rows of (batch x nodes^2 x hidden) floats processed per sampling chunk
_CHUNK_FLOATS = 4_000_000


class GeneratorShapeError(GraphError):
    pass


class ParamSet:
    """Ordered named parameters drawn from one seeded stream."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.tensors: Dict[str, Tensor] = {}

    def matrix(self, name, fan_in, fan_out, rows=None):
        w = glorot(self.rng, fan_in, fan_out)
        if rows is not None:
            w = w[:rows]
        self.tensors[name] = Tensor(w, requires_grad=True, name=name)

    def stacked(self, names: Sequence[str], fan_out: int):
        # one Glorot draw for a concatenated input layer, stored in pieces
        fan_in = fan_out * len(names)
        w = glorot(self.rng, fan_in, fan_out)
        for i, name in enumerate(names):
            self.tensors[name] = Tensor(w[i * fan_out:(i + 1) * fan_out].copy(), requires_grad=True, name=name)

    def bias(self, name, size):
        self.tensors[name] = Tensor(np.zeros(size), requires_grad=True, name=name)


def sample_categorical(logp: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of log-probabilities."""
    cdf = np.cumsum(np.exp(logp), axis=1)
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, logp.shape[1] - 1)


def pick(logp: Tensor, choice: np.ndarray) -> Tensor:
    """``logp[b, choice[b]]`` as a differentiable (B,) tensor."""
    b, d = logp.shape
    return gather(reshape(logp, (b * d,)), np.arange(b) * d + choice)


def sum_terms(terms: List[Tensor], batch: int) -> Tensor:
    if not terms:
        return Tensor(np.zeros(batch))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total


class Generator:
    """Interface: exact ``log_prob`` plus a consistent ancestral ``sample``."""

    kind = "abstract"

    def __init__(self, space: SpaceSpec, n_max: int):
        if n_max < space.n_nodes:
            raise ValueError(f"n_max={n_max} is smaller than the space size {space.n_nodes}")
        self.space = space
        self.n_max = n_max
        self.params: Dict[str, Tensor] = {}

    # subclasses implement _run(batch, ops, adj, rng) -> (logp Tensor, ops, adj)

    def _run(self, batch, ops, adj, rng):
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def _check(self, g: ArchGraph):
        s = self.space
        if g.n_nodes != s.n_nodes:
            raise GeneratorShapeError(f"graph has {g.n_nodes} nodes, space has {s.n_nodes}")
        if any(o >= s.d_ops for o in g.node_ops):
            raise GeneratorShapeError("op index out of range for the space")
        for idx, op in s.forced_ops().items():
            if g.node_ops[idx] != op:
                raise GeneratorShapeError(f"node {idx} must carry op {op}")

    def _pack(self, graphs: Sequence[ArchGraph]):
        for g in graphs:
            self._check(g)
        ops = np.array([g.node_ops for g in graphs], dtype=np.int64).reshape(len(graphs), self.space.n_nodes)
        adj = np.array([g.adjacency for g in graphs], dtype=np.bool_).reshape(
            len(graphs), self.space.n_nodes, self.space.n_nodes)
        return ops, adj

    def log_prob_batch(self, graphs: Sequence[ArchGraph]) -> Tensor:
        """Differentiable (B,) log-likelihoods when called under a Tape."""
        ops, adj = self._pack(graphs)
        logp, _, _ = self._run(len(graphs), ops, adj, None)
        return logp

    def log_prob(self, g: ArchGraph) -> float:
        return float(self.log_prob_batch([g]).data[0])

    def log_prob_many(self, graphs: Sequence[ArchGraph], chunk: int = 512) -> np.ndarray:
        out = [self.log_prob_batch(graphs[i:i + chunk]).data for i in range(0, len(graphs), chunk)]
        return np.concatenate(out) if out else np.zeros(0)

    def _chunk_size(self) -> int:
        n = self.space.n_nodes
        return max(1, _CHUNK_FLOATS // (n * n * self.hidden))

    def sample(self, rng: np.random.Generator, num: int = 1) -> List[Tuple[ArchGraph, float]]:
        """``num`` independent graphs with their exact log-probabilities."""
        out = []
        chunk = self._chunk_size()
        while len(out) < num:
            b = min(chunk, num - len(out))
            logp, ops, adj = self._run(b, None, None, rng)
            for i in range(b):
                g = from_adjacency(adj[i], ops[i].tolist(), self.space.roles)
                out.append((g, float(logp.data[i])))
        return out

    def sample_graph(self, rng: np.random.Generator) -> Tuple[ArchGraph, float]:
        return self.sample(rng, 1)[0]

    def sample_arrays(self, rng: np.random.Generator, num: int):
        """Raw (ops, adjacency, logp) arrays without building graph objects."""
        parts = []
        chunk = self._chunk_size()
        done = 0
        while done < num:
            b = min(chunk, num - done)
            logp, ops, adj = self._run(b, None, None, rng)
            parts.append((ops, adj, logp.data))
            done += b
        return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                np.concatenate([p[2] for p in parts]))

    # --- checkpoints --------------------------------------------------------

    def state_dict(self, compact: bool = False) -> dict:
        """Checkpoint document; ``compact`` stores arrays as base64 float64 bytes instead of float lists."""
        enc = encode_array if compact else (lambda a: {"shape": list(a.shape), "data": a.reshape(-1).tolist()})
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "config": self.config(),
            "space": self.space.to_dict(),
            "params": {k: enc(p.data) for k, p in self.params.items()},
        }

    def load_params(self, params: dict):
        for k, rec in params.items():
            if k not in self.params:
                raise KeyError(f"unexpected parameter {k!r} in checkpoint")
            arr = decode_array(rec)
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self.params[k].shape}")
            self.params[k].data = arr
        missing = set(self.params) - set(params)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.state_dict(), fh)
