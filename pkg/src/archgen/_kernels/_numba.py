"""numba-compiled twins of the kernels in ``_numpy``."""
import numpy as np
from numba import njit


@njit(cache=True)
def segment_sum(values, seg, n_segments):
    out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
    for e in range(values.shape[0]):
        s = seg[e]
        for c in range(values.shape[1]):
            out[s, c] += values[e, c]
    return out


@njit(cache=True)
def closure(adj):
    n = adj.shape[0]
    reach = np.zeros((n, n), dtype=np.bool_)
    for s in range(n):
        reach[s, s] = True
    for i in range(n):
        for j in range(i):
            if adj[i, j]:
                for s in range(n):
                    if reach[s, j]:
                        reach[s, i] = True
    return reach


@njit(cache=True)
def undirected_apsp(adj):
    n = adj.shape[0]
    dist = np.full((n, n), -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        head = 0
        tail = 1
        queue[0] = s
        while head < tail:
            u = queue[head]
            head += 1
            for v in range(n):
                if (adj[u, v] or adj[v, u]) and dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    queue[tail] = v
                    tail += 1
    return dist


@njit(cache=True)
def triangles(adj):
    n = adj.shape[0]
    tri = np.zeros(n, dtype=np.int64)
    deg = np.zeros(n, dtype=np.int64)
    for u in range(n):
        for v in range(n):
            if u != v and (adj[u, v] or adj[v, u]):
                deg[u] += 1
    for u in range(n):
        for v in range(u + 1, n):
            if not (adj[u, v] or adj[v, u]):
                continue
            for w in range(v + 1, n):
                if (adj[u, w] or adj[w, u]) and (adj[v, w] or adj[w, v]):
                    tri[u] += 1
                    tri[v] += 1
                    tri[w] += 1
    return tri, deg


@njit(cache=True)
def _io_paths(adj, src, dst):
    n = adj.shape[0]
    count = np.zeros(n, dtype=np.int64)
    lensum = np.zeros(n, dtype=np.int64)
    longest = np.full(n, -1, dtype=np.int64)
    count[src] = 1
    longest[src] = 0
    for i in range(src + 1, n):
        for j in range(i):
            if adj[i, j] and count[j] > 0:
                count[i] += count[j]
                lensum[i] += lensum[j] + count[j]
                if longest[j] + 1 > longest[i]:
                    longest[i] = longest[j] + 1
    return count[dst], lensum[dst], longest[dst]


def io_paths(adj, src, dst):
    c, s, l = _io_paths(adj, src, dst)
    return int(c), int(s), int(l)
