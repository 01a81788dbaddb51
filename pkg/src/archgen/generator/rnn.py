"""Sequence baseline: one GRU over the flattened decision sequence.

For node ``t`` the sequence holds one op token followed by the ``t`` edge
tokens ``a[t, 0..t-1]``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..space import SpaceSpec
from ..tensor import Tensor, add, gather, gru_cell, linear, log_sigmoid, log_softmax, mul, reshape
from .base import Generator, ParamSet, pick, sample_categorical, sum_terms


class RNNGenerator(Generator):
    kind = "rnn"

    def __init__(self, space: SpaceSpec, hidden: int = 128, n_max: Optional[int] = None, seed: int = 0):
        super().__init__(space, space.n_nodes if n_max is None else n_max)
        self.hidden, self.seed = hidden, seed
        H, D = hidden, space.d_ops
        # tokens: ops 0..D-1, edge-absent D, edge-present D+1, start D+2
        self.tok_edge0, self.tok_start = D, D + 2
        n_slots = self.n_max + self.n_max * (self.n_max - 1) // 2
        ps = ParamSet(seed)
        ps.matrix("tok_emb", D + 3, H)
        ps.matrix("slot_emb", n_slots, H)
        ps.matrix("gru_wi", H, 3 * H)
        ps.matrix("gru_wh", H, 3 * H)
        ps.bias("gru_bi", 3 * H)
        ps.bias("gru_bh", 3 * H)
        ps.matrix("attr_w", H, D)
        ps.bias("attr_b", D)
        ps.matrix("edge_w", H, 1)
        ps.bias("edge_b", 1)
        self.params = ps.tensors

    def config(self) -> dict:
        return {"hidden": self.hidden, "n_max": self.n_max, "seed": self.seed}

    def _run(self, batch: int, ops, adj, rng):
        p = self.params
        n = self.space.n_nodes
        sampling = ops is None
        if sampling:
            ops = np.zeros((batch, n), dtype=np.int64)
            adj = np.zeros((batch, n, n), dtype=np.bool_)
        forced = self.space.forced_ops()
        h = Tensor(np.zeros((batch, self.hidden)))
        prev = np.full(batch, self.tok_start)
        slot = 0
        terms = []

        def advance(tokens, slot_idx, h):
            x = add(gather(p["tok_emb"], tokens), gather(p["slot_emb"], np.full(batch, slot_idx)))
            return gru_cell(x, h, p["gru_wi"], p["gru_wh"], p["gru_bi"], p["gru_bh"])

        for t in range(n):
            h = advance(prev, slot, h)
            slot += 1
            if t in forced:
                if sampling:
                    ops[:, t] = forced[t]
            else:
                lp = log_softmax(linear(h, p["attr_w"], p["attr_b"]))
                if sampling:
                    ops[:, t] = sample_categorical(lp.data, rng.random(batch))
                terms.append(pick(lp, ops[:, t]))
            prev = ops[:, t]
            for j in range(t):
                h = advance(prev, slot, h)
                slot += 1
                logit = reshape(linear(h, p["edge_w"], p["edge_b"]), (batch,))
                if sampling:
                    prob = 0.5 * (1.0 + np.tanh(0.5 * logit.data))
                    adj[:, t, j] = rng.random(batch) < prob
                bit = adj[:, t, j]
                terms.append(log_sigmoid(mul(logit, np.where(bit, 1.0, -1.0))))
                prev = self.tok_edge0 + bit.astype(np.int64)
        return sum_terms(terms, batch), ops, adj
