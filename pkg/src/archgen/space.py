"""Search spaces: constraints, validation, rejection sampling, enumeration."""
from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, List, Optional

from .graph import ArchGraph, GraphError, Roles, canonical_hash, has_path, new_graph, prune_to_io_connected, space_size

ENUMERATION_LIMIT = 10 ** 7

VIOLATION_KINDS = ("too-many-edges", "no-io-path", "op-out-of-range", "role-mismatch", "size-mismatch")


@dataclass(frozen=True)
class SpaceSpec:
    """Shape and constraints of a family of architectures.

    With ``io_roles`` set, node 0 is the input and node ``n_nodes - 1`` the
    output; ``input_op`` / ``output_op`` pin their operation types.
    """

    n_nodes: int
    d_ops: int
    io_roles: bool = False
    input_op: Optional[int] = None
    output_op: Optional[int] = None
    max_edges: Optional[int] = None
    require_io_path: bool = False
    prune_dangling: bool = False
    name: str = "custom"

    def __post_init__(self):
        if self.n_nodes < 1 or self.d_ops < 1:
            raise ValueError("n_nodes and d_ops must be >= 1")
        if self.max_edges is not None and not 0 <= self.max_edges <= self.n_nodes * (self.n_nodes - 1) // 2:
            raise ValueError(f"max_edges {self.max_edges} exceeds n(n-1)/2")
        needs_roles = self.require_io_path or self.prune_dangling or self.input_op is not None or self.output_op is not None
        if needs_roles and not self.io_roles:
            raise ValueError("io constraints need io_roles=True")
        if self.io_roles and self.n_nodes < 2:
            raise ValueError("io_roles needs at least 2 nodes")
        for op in (self.input_op, self.output_op):
            if op is not None and not 0 <= op < self.d_ops:
                raise ValueError(f"forced op {op} out of range [0, {self.d_ops})")

    @property
    def roles(self) -> Optional[Roles]:
        return Roles(0, self.n_nodes - 1) if self.io_roles else None

    def forced_ops(self, n: Optional[int] = None) -> dict:
        """Node index -> pinned op for an ``n``-node graph (default full size)."""
        n = self.n_nodes if n is None else n
        out = {}
        if self.io_roles:
            if self.input_op is not None:
                out[0] = self.input_op
            if self.output_op is not None:
                out[n - 1] = self.output_op
        return out

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "randwire-cell": SpaceSpec(n_nodes=32, d_ops=1, name="randwire-cell"),
    "nasbench101-like": SpaceSpec(n_nodes=7, d_ops=3, io_roles=True, input_op=0, output_op=0, max_edges=9,
                                  require_io_path=True, prune_dangling=True, name="nasbench101-like"),
    "enas-macro": SpaceSpec(n_nodes=12, d_ops=6, io_roles=True, require_io_path=True, name="enas-macro"),
    "tiny": SpaceSpec(n_nodes=3, d_ops=2, name="tiny"),
}


def get_space(name_or_spec) -> SpaceSpec:
    if isinstance(name_or_spec, SpaceSpec):
        return name_or_spec
    if isinstance(name_or_spec, dict):
        return SpaceSpec(**name_or_spec)
    try:
        return PRESETS[name_or_spec]
    except KeyError:
        raise ValueError(f"unknown space preset {name_or_spec!r}; known: {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str = ""


def postprocess(g: ArchGraph, space: SpaceSpec) -> ArchGraph:
    if space.prune_dangling and g.roles is not None:
        return prune_to_io_connected(g)
    return g


def validate(g: ArchGraph, space: SpaceSpec) -> List[Violation]:
    """All violated constraints (empty list means valid); prunes first if enabled."""
    g = postprocess(g, space)
    out = []
    if g.n_nodes > space.n_nodes or (not space.prune_dangling and g.n_nodes != space.n_nodes):
        out.append(Violation("size-mismatch", f"{g.n_nodes} nodes in a {space.n_nodes}-node space"))
    if space.max_edges is not None and g.edge_count > space.max_edges:
        out.append(Violation("too-many-edges", f"{g.edge_count} > {space.max_edges}"))
    if space.require_io_path and (g.roles is None or not has_path(g, g.roles.input, g.roles.output)):
        out.append(Violation("no-io-path", "no directed input -> output path"))
    bad = [o for o in g.node_ops if o >= space.d_ops]
    if bad:
        out.append(Violation("op-out-of-range", f"ops {bad} >= {space.d_ops}"))
    if space.io_roles:
        want = Roles(0, g.n_nodes - 1)
        if g.roles != want:
            out.append(Violation("role-mismatch", f"roles {g.roles} != {tuple(want)}"))
        else:
            for idx, op in space.forced_ops(g.n_nodes).items():
                if g.node_ops[idx] != op:
                    out.append(Violation("role-mismatch", f"node {idx} has op {g.node_ops[idx]}, needs {op}"))
    elif g.roles is not None:
        out.append(Violation("role-mismatch", "space has no io roles"))
    return out


class RejectionExhausted(RuntimeError):
    def __init__(self, tries: int, histogram: Counter):
        self.tries = tries
        self.histogram = histogram
        super().__init__(f"no valid graph after {tries} tries; violations: {dict(histogram)}")


@dataclass
class Draw:
    graph: ArchGraph           # post-processed, validated
    raw: ArchGraph             # as produced by the sampler
    tries: int
    payload: object = None     # whatever the sampler attached (e.g. log-prob)
    violations: list = field(default_factory=list)


def draw_valid(sampler: Callable, space: SpaceSpec, max_tries: int = 100) -> Draw:
    """Draw until the post-processed graph validates.

    ``sampler()`` returns a graph or a ``(graph, payload)`` pair.
    """
    if max_tries < 1:
        raise ValueError("max_tries must be >= 1")
    rejected = []
    for attempt in range(1, max_tries + 1):
        out = sampler()
        raw, payload = out if isinstance(out, tuple) else (out, None)
        g = postprocess(raw, space)
        viol = validate(g, space)
        if not viol:
            return Draw(g, raw, attempt, payload, rejected)
        rejected.append(viol)
    hist = Counter(v.kind for viol in rejected for v in viol)
    raise RejectionExhausted(max_tries, hist)


def rejection_sample(sampler: Callable, space: SpaceSpec, max_tries: int = 100):
    d = draw_valid(sampler, space, max_tries)
    return d.graph, d.tries


def _check_guard(space: SpaceSpec):
    size = space_size(space.n_nodes, space.d_ops)
    if size > ENUMERATION_LIMIT:
        raise ValueError(f"space has {size} graphs, over the enumeration guard of {ENUMERATION_LIMIT}")


def enumerate_raw(space: SpaceSpec) -> Iterator[ArchGraph]:
    """Every graph a generator for ``space`` can emit: all topologies, pinned ops respected.

    Order: lexicographic over bit strings, then over op tuples.
    """
    _check_guard(space)
    n, d = space.n_nodes, space.d_ops
    forced = space.forced_ops()
    choices = [[forced[i]] if i in forced else range(d) for i in range(n)]
    op_tuples = list(itertools.product(*choices))
    for bits in itertools.product("01", repeat=n * (n - 1) // 2):
        b = "".join(bits)
        for ops in op_tuples:
            yield new_graph(n, b, ops, space.roles)


def enumerate_space(space: SpaceSpec) -> Iterator[ArchGraph]:
    """Every valid graph exactly once (post-pruning identities when pruning is on)."""
    seen = set()
    n, d = space.n_nodes, space.d_ops
    _check_guard(space)
    for bits in itertools.product("01", repeat=n * (n - 1) // 2):
        b = "".join(bits)
        for ops in itertools.product(range(d), repeat=n):
            try:
                g = new_graph(n, b, ops, space.roles)
            except GraphError:
                continue
            g = postprocess(g, space)
            if validate(g, space):
                continue
            if space.prune_dangling:
                h = canonical_hash(g)
                if h in seen:
                    continue
                seen.add(h)
            yield g
