"""Attributed DAGs with a strictly lower-triangular adjacency.

``adjacency[i, j]`` (``j < i``) means the output of node ``j`` feeds node
``i``; every path therefore runs from lower to higher index and the graph
is acyclic by construction.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels


class GraphError(ValueError):
    """Raised for structurally invalid graphs."""


class GraphFormatError(GraphError):
    """Raised when a graph record cannot be parsed; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.detail = message


class Roles(NamedTuple):
    input: int
    output: int


def _tril(n: int):
    return np.tril_indices(n, -1)


@dataclass(frozen=True, eq=False)
class ArchGraph:
    n_nodes: int
    adjacency: np.ndarray
    node_ops: tuple
    roles: Optional[Roles] = None

    @property
    def bits(self) -> str:
        rows, cols = _tril(self.n_nodes)
        return "".join("1" if b else "0" for b in self.adjacency[rows, cols])

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum())

    def edges(self) -> list:
        """Edges as ``(source, target)`` pairs, i.e. ``(j, i)`` for ``a[i][j] = 1``."""
        tgt, src = np.nonzero(self.adjacency)
        return sorted(zip(src.tolist(), tgt.tolist()), key=lambda e: (e[1], e[0]))

    def key(self) -> tuple:
        return (self.n_nodes, self.bits, self.node_ops, self.roles)

    def __eq__(self, other):
        if not isinstance(other, ArchGraph):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"ArchGraph(n={self.n_nodes}, bits={self.bits!r}, ops={list(self.node_ops)}, roles={self.roles})"


def _check_roles(n: int, roles) -> Optional[Roles]:
    if roles is None:
        return None
    if isinstance(roles, dict):
        roles = Roles(int(roles["input"]), int(roles["output"]))
    else:
        roles = Roles(int(roles[0]), int(roles[1]))
    if roles.input == roles.output:
        raise GraphError("duplicate role indices: input and output coincide")
    if not (0 <= roles.input < n and 0 <= roles.output < n):
        raise GraphError(f"role index out of range for n={n}: {tuple(roles)}")
    return roles


def _check_ops(n: int, node_ops: Sequence[int], d_ops: Optional[int]) -> tuple:
    ops = tuple(int(o) for o in node_ops)
    if len(ops) != n:
        raise GraphError(f"node_ops length {len(ops)} != n_nodes {n}")
    for o in ops:
        if o < 0 or (d_ops is not None and o >= d_ops):
            raise GraphError(f"op index {o} out of range [0, {d_ops})")
    return ops


def new_graph(n_nodes: int, adjacency_bits, node_ops: Sequence[int], roles=None,
              d_ops: Optional[int] = None) -> ArchGraph:
    """Build a validated graph from row-major lower-triangular bits.

    ``adjacency_bits`` may be a ``"0101"`` string or any sequence of 0/1.
    """
    n = int(n_nodes)
    if n < 1:
        raise GraphError("n_nodes must be positive")
    if isinstance(adjacency_bits, str):
        if set(adjacency_bits) - {"0", "1"}:
            raise GraphError("bits must contain only '0' and '1'")
        bits = [c == "1" for c in adjacency_bits]
    else:
        bits = [bool(b) for b in adjacency_bits]
    expected = n * (n - 1) // 2
    if len(bits) != expected:
        raise GraphError(f"length mismatch: got {len(bits)} bits, expected {expected}")
    adj = np.zeros((n, n), dtype=np.bool_)
    rows, cols = _tril(n)
    adj[rows, cols] = bits
    return from_adjacency(adj, node_ops, roles, d_ops=d_ops)


def from_adjacency(adj, node_ops: Sequence[int], roles=None, d_ops: Optional[int] = None) -> ArchGraph:
    adj = np.array(adj, dtype=np.bool_)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {adj.shape}")
    n = adj.shape[0]
    if np.triu(adj).any():
        raise GraphError("adjacency has entries on or above the diagonal")
    ops = _check_ops(n, node_ops, d_ops)
    adj.setflags(write=False)
    return ArchGraph(n, adj, ops, _check_roles(n, roles))


def canonical_hash(g: ArchGraph) -> str:
    roles = "-" if g.roles is None else f"{g.roles.input},{g.roles.output}"
    payload = f"{g.n_nodes}|{g.bits}|{','.join(map(str, g.node_ops))}|{roles}"
    return hashlib.sha256(payload.encode("ascii")).hexdigest()


def _check_index(g: ArchGraph, *idx: int):
    for i in idx:
        if not 0 <= i < g.n_nodes:
            raise GraphError(f"node index {i} out of range for n={g.n_nodes}")


def has_path(g: ArchGraph, s: int, t: int) -> bool:
    """Directed reachability; ``s == t`` counts as a length-0 path."""
    _check_index(g, s, t)
    if s == t:
        return True
    if s > t:
        return False
    return bool(_kernels.closure(g.adjacency)[s, t])


def prune_to_io_connected(g: ArchGraph) -> ArchGraph:
    """Keep only nodes on some input -> output route (plus input and output)."""
    if g.roles is None:
        raise GraphError("roles missing: pruning needs designated input and output")
    reach = _kernels.closure(g.adjacency)
    keep = reach[g.roles.input, :] & reach[:, g.roles.output]
    keep[g.roles.input] = True
    keep[g.roles.output] = True
    idx = np.flatnonzero(keep)
    if idx.size == g.n_nodes:
        return g
    sub = g.adjacency[np.ix_(idx, idx)]
    remap = {int(old): new for new, old in enumerate(idx)}
    ops = [g.node_ops[i] for i in idx]
    return from_adjacency(sub, ops, Roles(remap[g.roles.input], remap[g.roles.output]))


@dataclass(frozen=True)
class GraphStats:
    edge_count: int
    clustering_coefficient: float
    avg_shortest_path: float
    io_avg_path: Optional[float] = None
    io_longest_path: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "edge_count": self.edge_count,
            "clustering_coefficient": self.clustering_coefficient,
            "avg_shortest_path": self.avg_shortest_path,
            "io_avg_path": self.io_avg_path,
            "io_longest_path": self.io_longest_path,
        }


def clustering_coefficient(g: ArchGraph) -> float:
    """Mean local clustering of the undirected view; degree < 2 nodes count as 0."""
    tri, deg = _kernels.triangles(g.adjacency)
    local = np.zeros(g.n_nodes)
    ok = deg >= 2
    local[ok] = 2.0 * tri[ok] / (deg[ok] * (deg[ok] - 1))
    return float(local.mean())


def avg_shortest_path(g: ArchGraph) -> float:
    """Mean hop distance over connected unordered pairs (0 when none are)."""
    dist = _kernels.undirected_apsp(g.adjacency)
    iu = np.triu_indices(g.n_nodes, 1)
    d = dist[iu]
    d = d[d > 0]
    return float(d.sum() / d.size) if d.size else 0.0


def density(g: ArchGraph) -> float:
    n = g.n_nodes
    return g.edge_count / (n * (n - 1) / 2) if n > 1 else 0.0


def graph_stats(g: ArchGraph) -> GraphStats:
    io_avg = io_long = None
    if g.roles is not None:
        count, lensum, longest = _kernels.io_paths(g.adjacency, g.roles.input, g.roles.output)
        if count > 0:
            io_avg = lensum / count
            io_long = longest
    return GraphStats(
        edge_count=g.edge_count,
        clustering_coefficient=clustering_coefficient(g),
        avg_shortest_path=avg_shortest_path(g),
        io_avg_path=io_avg,
        io_longest_path=io_long,
    )


def space_size(n: int, d: int) -> int:
    if n < 1 or d < 1:
        raise ValueError("space_size needs n >= 1 and d >= 1")
    return d ** n * 2 ** (n * (n - 1) // 2)


# --- record codec -----------------------------------------------------------

def to_record(g: ArchGraph) -> dict:
    return {
        "n": g.n_nodes,
        "bits": g.bits,
        "ops": list(g.node_ops),
        "roles": None if g.roles is None else {"input": g.roles.input, "output": g.roles.output},
    }


def from_record(rec: dict, d_ops: Optional[int] = None) -> ArchGraph:
    if not isinstance(rec, dict):
        raise GraphFormatError("record", "expected an object")
    unknown = set(rec) - {"n", "bits", "ops", "roles"}
    if unknown:
        raise GraphFormatError(sorted(unknown)[0], "unknown field")
    try:
        n = rec["n"]
    except KeyError:
        raise GraphFormatError("n", "missing") from None
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise GraphFormatError("n", f"expected positive integer, got {n!r}")
    bits = rec.get("bits")
    if not isinstance(bits, str) or set(bits) - {"0", "1"}:
        raise GraphFormatError("bits", "expected a 0/1 string")
    if len(bits) != n * (n - 1) // 2:
        raise GraphFormatError("bits", f"length {len(bits)} does not match n={n}")
    ops = rec.get("ops")
    if not isinstance(ops, list) or not all(isinstance(o, int) and not isinstance(o, bool) for o in ops):
        raise GraphFormatError("ops", "expected a list of integers")
    roles = rec.get("roles")
    if roles is not None:
        if not isinstance(roles, dict) or set(roles) != {"input", "output"}:
            raise GraphFormatError("roles", "expected {input, output} or null")
    try:
        return new_graph(n, bits, ops, roles, d_ops=d_ops)
    except GraphError as exc:
        field = "roles" if "role" in str(exc) else "ops"
        raise GraphFormatError(field, str(exc)) from None


def dumps(g: ArchGraph) -> str:
    return json.dumps(to_record(g), separators=(", ", ": "))


def loads(text: str, d_ops: Optional[int] = None) -> ArchGraph:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError("record", f"malformed text: {exc}") from None
    return from_record(rec, d_ops=d_ops)


def write_graphs(path, graphs: Iterable[ArchGraph]) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(dumps(g) + "\n")


def read_graphs(path, d_ops: Optional[int] = None) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(loads(line, d_ops=d_ops))
            except GraphFormatError as exc:
                raise GraphFormatError(exc.field, f"line {lineno}: {exc.detail}") from None
    return out
