"""GNN-based auto-regressive DAG generator with mixture-of-Bernoulli edge rows.

One node is added per step in index order. At step ``t`` the generator

1. draws the node's op from a categorical head on ``[mean of the previous
   step's node states, position embedding of t]``;
2. runs ``S`` rounds of message passing over the partial graph, where the
   new node is tied to every earlier node by a *candidate* edge;
3. draws the edge row ``a[t, :t]`` from a K-component mixture of
   independent Bernoullis.

The likelihood always marginalises the mixture component.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..space import SpaceSpec
from ..tensor import (
    Tensor, add, gather, gather_add, gru_cell, linear, log_sigmoid, log_softmax, logsumexp, mean, mul, relu,
    reshape, segment_sum, sum_,
)
from .base import Generator, ParamSet, pick, sample_categorical, sum_terms

REALIZED, CANDIDATE = 0, 1


def build_edges(ops_batch_m: int, adj: np.ndarray, t: int, with_candidates: bool = True):
    """Directed message edges for a batch of ``t + 1``-node partial graphs.

    ``adj`` is (B, >=t, >=t) holding realised edges among nodes ``< t``.
    Returns ``(src, dst, state)`` sorted by ``(dst, src)``.
    """
    b = adj.shape[0]
    m = ops_batch_m
    bb, ii, jj = np.nonzero(adj[:, :t, :t])
    off = bb * m
    src = [off + jj, off + ii]
    dst = [off + ii, off + jj]
    state = [np.full(2 * bb.size, REALIZED)]
    if with_candidates and t > 0:
        cb = np.repeat(np.arange(b), t) * m
        cj = np.tile(np.arange(t), b)
        new = cb + t
        src += [cb + cj, new]
        dst += [new, cb + cj]
        state.append(np.full(2 * cb.size, CANDIDATE))
    src = np.concatenate(src).astype(np.int64)
    dst = np.concatenate(dst).astype(np.int64)
    state = np.concatenate(state).astype(np.int64)
    order = np.lexsort((src, dst))
    return src[order], dst[order], state[order]


class GraphGenerator(Generator):
    kind = "graph"

    def __init__(self, space: SpaceSpec, K: int = 10, S: int = 7, hidden: int = 128,
                 n_max: Optional[int] = None, seed: int = 0):
        if K < 1:
            raise ValueError("K must be >= 1")
        if S < 0:
            raise ValueError("S must be >= 0")
        super().__init__(space, space.n_nodes if n_max is None else n_max)
        self.K, self.S, self.hidden, self.seed = K, S, hidden, seed
        H, D = hidden, space.d_ops
        ps = ParamSet(seed)
        ps.matrix("op_emb", D, H)
        ps.matrix("pos_emb", self.n_max, H)
        ps.matrix("edge_emb", 2, H)
        ps.stacked(["msg_w1_src", "msg_w1_dst", "msg_w1_edge"], H)
        ps.bias("msg_b1", H)
        ps.matrix("msg_w2", H, H)
        ps.bias("msg_b2", H)
        ps.matrix("gru_wi", H, 3 * H)
        ps.matrix("gru_wh", H, 3 * H)
        ps.bias("gru_bi", 3 * H)
        ps.bias("gru_bh", 3 * H)
        ps.stacked(["theta_w1_new", "theta_w1_old"], H)
        ps.bias("theta_b1", H)
        ps.matrix("theta_w2", H, K)
        ps.bias("theta_b2", K)
        ps.matrix("alpha_w1", H, H)
        ps.bias("alpha_b1", H)
        ps.matrix("alpha_w2", H, K)
        ps.bias("alpha_b2", K)
        ps.stacked(["attr_w1_ctx", "attr_w1_pos"], H)
        ps.bias("attr_b1", H)
        ps.matrix("attr_w2", H, D)
        ps.bias("attr_b2", D)
        self.params = ps.tensors

    def config(self) -> dict:
        return {"K": self.K, "S": self.S, "hidden": self.hidden, "n_max": self.n_max, "seed": self.seed}

    # --- message passing -------------------------------------------------------

    def _propagate(self, h: Tensor, src, dst, state, n_total: int) -> Tensor:
        p = self.params
        if self.S == 0:
            return h
        edge_part = linear(p["edge_emb"], p["msg_w1_edge"])
        zero_msg = Tensor(np.zeros((n_total, self.hidden)))
        for _ in range(self.S):
            if src.size:
                a = linear(h, p["msg_w1_src"])
                c = linear(h, p["msg_w1_dst"])
                pre = gather_add([(a, src), (c, dst), (edge_part, state)], p["msg_b1"])
                msg = linear(relu(pre), p["msg_w2"], p["msg_b2"])
                agg = segment_sum(msg, dst, n_total)
            else:
                agg = zero_msg
            h = gru_cell(agg, h, p["gru_wi"], p["gru_wh"], p["gru_bi"], p["gru_bh"])
        return h

    def initial_states(self, ops_flat: np.ndarray, pos_flat: np.ndarray) -> Tensor:
        p = self.params
        return add(gather(p["op_emb"], ops_flat), gather(p["pos_emb"], pos_flat))

    def propagate(self, node_ops: Sequence[int], adjacency: np.ndarray, edges=None) -> np.ndarray:
        """Node states (t+1, hidden) for a partial graph whose last node is new.

        ``adjacency`` holds realised edges among the first ``t`` nodes. A
        custom ``(src, dst, state)`` edge list may be passed in any order;
        it is canonicalised before accumulation.
        """
        m = len(node_ops)
        t = m - 1
        if edges is None:
            src, dst, state = build_edges(m, np.asarray(adjacency, dtype=bool)[None], t)
        else:
            src, dst, state = (np.asarray(e, dtype=np.int64) for e in edges)
            order = np.lexsort((src, dst))
            src, dst, state = src[order], dst[order], state[order]
        h = self.initial_states(np.asarray(node_ops, dtype=np.int64), np.arange(m))
        return self._propagate(h, src, dst, state, m).data

    # --- heads -----------------------------------------------------------------

    def _attr_logp(self, prev_h: Optional[Tensor], batch: int, t: int) -> Tensor:
        p = self.params
        H = self.hidden
        pos = gather(p["pos_emb"], np.full(batch, t))
        hidden = linear(pos, p["attr_w1_pos"], p["attr_b1"])
        if prev_h is not None:
            ctx = mean(reshape(prev_h, (batch, t, H)), axis=1)
            hidden = add(hidden, linear(ctx, p["attr_w1_ctx"]))
        logits = linear(relu(hidden), p["attr_w2"], p["attr_b2"])
        return log_softmax(logits)

    def _edge_heads(self, h: Tensor, batch: int, t: int):
        """(theta (B*t, K), log mixture weights (B, K)) for the new node ``t``."""
        p = self.params
        m = t + 1
        new_idx = np.arange(batch) * m + t
        old_idx = (np.arange(batch)[:, None] * m + np.arange(t)[None, :]).reshape(-1)
        h_new = gather(h, new_idx)
        h_old = gather(h, old_idx)
        from_new = gather(linear(h_new, p["theta_w1_new"]), np.repeat(np.arange(batch), t))
        hid = relu(add(add(from_new, linear(h_old, p["theta_w1_old"])), p["theta_b1"]))
        theta = linear(hid, p["theta_w2"], p["theta_b2"])
        alpha = linear(relu(linear(h_new, p["alpha_w1"], p["alpha_b1"])), p["alpha_w2"], p["alpha_b2"])
        return theta, log_softmax(alpha)

    # --- the auto-regressive pass ------------------------------------------------

    def _run(self, batch: int, ops, adj, rng):
        if ops is None:
            return self._sample(batch, rng)
        n, K = self.space.n_nodes, self.K
        forced = self.space.forced_ops()
        terms = []
        prev_h = None
        for t in range(n):
            if t not in forced:
                terms.append(pick(self._attr_logp(prev_h, batch, t), ops[:, t]))
            m = t + 1
            src, dst, state = build_edges(m, adj, t)
            h0 = self.initial_states(ops[:, :m].reshape(-1), np.tile(np.arange(m), batch))
            h = self._propagate(h0, src, dst, state, batch * m)
            if t > 0:
                theta, log_alpha = self._edge_heads(h, batch, t)
                sign = np.where(adj[:, t, :t].reshape(-1), 1.0, -1.0)[:, None]
                ll = log_sigmoid(mul(theta, sign))
                per_comp = sum_(reshape(ll, (batch, t, K)), axis=1)
                terms.append(logsumexp(add(log_alpha, per_comp)))
            prev_h = h
        return sum_terms(terms, batch), ops, adj

    def _sample(self, batch: int, rng: np.random.Generator):
        """Ancestral sampling; rows sharing a generated prefix share one forward pass."""
        n, K = self.space.n_nodes, self.K
        ops = np.zeros((batch, n), dtype=np.int64)
        adj = np.zeros((batch, n, n), dtype=np.bool_)
        logp = np.zeros(batch)
        rows = np.arange(batch)
        forced = self.space.forced_ops()
        prev_h, prev_inv, prev_u = None, np.zeros(batch, dtype=np.int64), 1
        for t in range(n):
            if t in forced:
                ops[:, t] = forced[t]
            else:
                lp = self._attr_logp(prev_h, prev_u, t).data[prev_inv]
                ops[:, t] = sample_categorical(lp, rng.random(batch))
                logp += lp[rows, ops[:, t]]
            m = t + 1
            key = np.concatenate([ops[:, :m], adj[:, :t, :t].reshape(batch, -1)], axis=1)
            _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
            inv = inv.reshape(-1)
            u = first.size
            src, dst, state = build_edges(m, adj[first], t)
            h0 = self.initial_states(ops[first, :m].reshape(-1), np.tile(np.arange(m), u))
            h = self._propagate(h0, src, dst, state, u * m)
            if t > 0:
                theta, log_alpha = self._edge_heads(h, u, t)
                th = theta.data.reshape(u, t, K)[inv]
                la = log_alpha.data[inv]
                comp = sample_categorical(la, rng.random(batch))
                prob = 0.5 * (1.0 + np.tanh(0.5 * th[rows, :, comp]))
                bits = rng.random((batch, t)) < prob
                adj[:, t, :t] = bits
                ll = -np.logaddexp(0.0, -th * np.where(bits, 1.0, -1.0)[:, :, None])
                z = la + ll.sum(axis=1)
                zmax = z.max(axis=1, keepdims=True)
                logp += (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)))[:, 0]
            prev_h, prev_inv, prev_u = h, inv, u
        return Tensor(logp), ops, adj
