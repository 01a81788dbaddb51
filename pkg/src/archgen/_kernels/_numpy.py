"""Pure-numpy implementations of the hot kernels.

Every function here has a numba twin in ``_numba`` with an identical
signature and bit-identical results.
"""
import numpy as np


def segment_sum(values, seg, n_segments):
    out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
    # np.add.at applies updates sequentially in element order
    np.add.at(out, seg, values)
    return out


def closure(adj):
    """reach[s, t] is True iff a directed path s -> t exists (s -> s included)."""
    n = adj.shape[0]
    reach = np.eye(n, dtype=np.bool_)
    # edges run low -> high index, so one pass in index order suffices
    for i in range(n):
        preds = adj[i, :i]
        if preds.any():
            reach[:, i] |= reach[:, :i][:, preds].any(axis=1)
    return reach


def undirected_apsp(adj):
    """Hop distances on the undirected view; -1 marks unreachable pairs."""
    n = adj.shape[0]
    und = adj | adj.T
    dist = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(dist, 0)
    frontier = np.eye(n, dtype=np.bool_)
    seen = frontier.copy()
    d = 0
    while frontier.any():
        d += 1
        nxt = (frontier.astype(np.int64) @ und.astype(np.int64)) > 0
        nxt &= ~seen
        dist[nxt] = d
        seen |= nxt
        frontier = nxt
    return dist


def triangles(adj):
    """Per-node (triangle count, degree) on the undirected view."""
    und = (adj | adj.T).astype(np.int64)
    tri = ((und @ und) * und).sum(axis=1) // 2
    return tri, und.sum(axis=1)


def io_paths(adj, src, dst):
    """(path count, total length over paths, longest length) for src -> dst.

    Longest is -1 when no path exists.
    """
    n = adj.shape[0]
    count = np.zeros(n, dtype=np.int64)
    lensum = np.zeros(n, dtype=np.int64)
    longest = np.full(n, -1, dtype=np.int64)
    count[src] = 1
    longest[src] = 0
    for i in range(src + 1, n):
        preds = np.flatnonzero(adj[i, :i] & (count[:i] > 0))
        if preds.size:
            count[i] = count[preds].sum()
            lensum[i] = (lensum[preds] + count[preds]).sum()
            longest[i] = longest[preds].max() + 1
    return int(count[dst]), int(lensum[dst]), int(longest[dst])
