"""Independent reference implementations used as test oracles."""
import itertools

import networkx as nx
import numpy as np


def to_nx(g):
    dg = nx.DiGraph()
    dg.add_nodes_from(range(g.n_nodes))
    for i, j in zip(*np.nonzero(g.adjacency)):
        dg.add_edge(int(j), int(i))
    return dg


def clustering(g):
    ug = to_nx(g).to_undirected()
    tri = nx.triangles(ug)
    vals = []
    for v in ug.nodes:
        d = ug.degree(v)
        vals.append(0.0 if d < 2 else 2.0 * tri[v] / (d * (d - 1)))
    return sum(vals) / len(vals)


def avg_shortest(g):
    ug = to_nx(g).to_undirected()
    lengths = dict(nx.all_pairs_shortest_path_length(ug))
    ds = [lengths[u][v] for u, v in itertools.combinations(range(g.n_nodes), 2) if v in lengths[u]]
    return sum(ds) / len(ds) if ds else 0.0


def io_paths(g):
    """(mean length, longest) over every simple input -> output path, or (None, None)."""
    if g.roles is None:
        return None, None
    paths = list(nx.all_simple_paths(to_nx(g), g.roles.input, g.roles.output))
    if not paths:
        return None, None
    lengths = [len(p) - 1 for p in paths]
    return sum(lengths) / len(lengths), max(lengths)


def reach(g, s, t):
    return s == t or nx.has_path(to_nx(g), s, t)


def exact_log1mexp(logp, digits=100):
    import mpmath
    mpmath.mp.dps = digits
    return float(mpmath.log1p(-mpmath.exp(mpmath.mpf(logp))))
