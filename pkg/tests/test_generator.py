import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from archgen import tensor as T
from archgen.generator import GeneratorShapeError, GraphGenerator, RNNGenerator, load_generator, make_generator
from archgen.generator.graph_gen import CANDIDATE, build_edges
from archgen.graph import new_graph
from archgen.space import SpaceSpec, enumerate_space
from archgen.tensor import Tape
from conftest import random_graph

KINDS = ("graph", "rnn")


def _small(kind, space, seed=0, **kw):
    return make_generator(kind, space, hidden=kw.pop("hidden", 16), seed=seed, **kw)


def _exact(gen, space):
    graphs = list(enumerate_space(space))
    return graphs, gen.log_prob_many(graphs)


def _code(ops, adj, n):
    # index of a sample in a fixed enumeration of the n-node space
    key = 0
    for t in range(n):
        for j in range(t):
            key = key * 2 + int(adj[t, j])
    for o in ops:
        key = key * 8 + int(o)
    return key


def test_defaults():
    gen = GraphGenerator(SpaceSpec(n_nodes=3, d_ops=2))
    assert (gen.K, gen.S, gen.hidden) == (10, 7, 128)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(5))
def test_normalization(tiny, kind, seed):
    _, lp = _exact(make_generator(kind, tiny, seed=seed), tiny)
    assert abs(np.exp(lp).sum() - 1.0) <= 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_sample_logp_matches_teacher_forcing(tiny, kind):
    gen = _small(kind, tiny, seed=3)
    samples = gen.sample(np.random.default_rng(0), 200)
    lp = gen.log_prob_many([g for g, _ in samples])
    assert np.max(np.abs(lp - np.array([l for _, l in samples]))) <= 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_sampler_goodness_of_fit(tiny, kind):
    # chi-square against exact probabilities; robust to the sampling seed
    gen = _small(kind, tiny, seed=11)
    graphs, lp = _exact(gen, tiny)
    index = {_code(g.node_ops, np.asarray(g.adjacency), 3): i for i, g in enumerate(graphs)}
    ops, adj, _ = gen.sample_arrays(np.random.default_rng(5), 40_000)
    counts = np.bincount([index[_code(o, a, 3)] for o, a in zip(ops, adj)], minlength=len(graphs))
    expected = np.exp(lp) * counts.sum()
    chi2 = ((counts - expected) ** 2 / expected).sum()
    # 63 degrees of freedom: mean 63, sd 11.2; 120 is beyond five sd
    assert chi2 < 120


def test_k1_is_independent_bernoullis(tiny):
    gen = GraphGenerator(tiny, K=1, S=2, hidden=16, seed=4)
    assert gen.params["alpha_w2"].shape == (16, 1)
    g = new_graph(3, "101", [1, 0, 1])
    # recompute the same factorisation step by step without the mixture
    total = 0.0
    prev_h = None
    for t in range(3):
        total += gen._attr_logp(prev_h, 1, t).data[0, g.node_ops[t]]
        adj = np.asarray(g.adjacency, dtype=bool)[None]
        src, dst, state = build_edges(t + 1, adj, t)
        h = gen._propagate(gen.initial_states(np.array(g.node_ops[:t + 1]), np.arange(t + 1)), src, dst, state, t + 1)
        if t > 0:
            theta, _ = gen._edge_heads(h, 1, t)
            bits = adj[0, t, :t]
            p = 1 / (1 + np.exp(-theta.data[:, 0]))
            total += np.sum(np.where(bits, np.log(p), np.log1p(-p)))
        prev_h = h
    assert gen.log_prob(g) == pytest.approx(total, abs=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_single_node_space_has_only_attribute_term(kind):
    space = SpaceSpec(n_nodes=1, d_ops=4)
    gen = _small(kind, space, seed=2)
    lp = np.array([gen.log_prob(new_graph(1, "", [o])) for o in range(4)])
    assert abs(np.exp(lp).sum() - 1) < 1e-12
    g, l = gen.sample_graph(np.random.default_rng(0))
    assert g.edge_count == 0 and l == pytest.approx(lp[g.node_ops[0]], abs=1e-12)


def test_s0_propagate_is_identity(tiny):
    gen = GraphGenerator(tiny, S=0, hidden=16, seed=1)
    h = gen.propagate([1, 0, 1], np.array([[0, 0, 0], [1, 0, 0], [0, 0, 0]], bool))
    want = gen.params["op_emb"].data[[1, 0, 1]] + gen.params["pos_emb"].data[[0, 1, 2]]
    assert np.array_equal(h, want)


def test_first_node_gets_zero_messages(tiny):
    gen = GraphGenerator(tiny, S=3, hidden=16, seed=1)
    p = gen.params
    h = T.add(T.gather(p["op_emb"], np.array([1])), T.gather(p["pos_emb"], np.array([0])))
    for _ in range(3):
        h = T.gru_cell(T.Tensor(np.zeros((1, 16))), h, p["gru_wi"], p["gru_wh"], p["gru_bi"], p["gru_bh"])
    assert np.array_equal(gen.propagate([1], np.zeros((0, 0), bool)), h.data)


def test_propagate_ignores_edge_list_order(rng):
    space = SpaceSpec(n_nodes=6, d_ops=3)
    gen = GraphGenerator(space, S=3, hidden=16, seed=9)
    g = random_graph(rng, 6, 0.5)
    adj = np.asarray(g.adjacency, dtype=bool)
    src, dst, state = build_edges(6, adj[None, :5, :5], 5)
    assert (state == CANDIDATE).sum() == 10
    base = gen.propagate(g.node_ops, adj[:5, :5], edges=(src, dst, state))
    for _ in range(5):
        perm = rng.permutation(src.size)
        out = gen.propagate(g.node_ops, adj[:5, :5], edges=(src[perm], dst[perm], state[perm]))
        assert np.array_equal(out, base)
    assert np.array_equal(base, gen.propagate(g.node_ops, adj[:5, :5]))


@pytest.mark.parametrize("kind", KINDS)
def test_same_seed_same_params_and_samples(tiny, kind):
    a, b = _small(kind, tiny, seed=7), _small(kind, tiny, seed=7)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    sa = a.sample(np.random.default_rng(3), 20)
    sb = b.sample(np.random.default_rng(3), 20)
    assert [(g, l) for g, l in sa] == [(g, l) for g, l in sb]


@pytest.mark.parametrize("kind", KINDS)
def test_param_count_depends_only_on_shape_config(kind):
    space = SpaceSpec(n_nodes=5, d_ops=3)
    counts = {_small(kind, space, seed=s).n_params for s in range(3)}
    assert len(counts) == 1
    bigger = _small(kind, space, seed=0, n_max=8).n_params
    assert bigger > counts.pop()


def test_graph_param_count_formula():
    gen = GraphGenerator(SpaceSpec(n_nodes=4, d_ops=3), K=5, hidden=8, n_max=6)
    H, D, K, N = 8, 3, 5, 6
    want = (D * H + N * H + 2 * H + 3 * H * H + H + H * H + H + 2 * 3 * H * H + 6 * H
            + 2 * H * H + H + H * K + K + H * H + H + H * K + K + 2 * H * H + H + H * D + D)
    assert gen.n_params == want


@pytest.mark.parametrize("kind", KINDS)
def test_n_max_too_small(kind):
    with pytest.raises(ValueError, match="n_max"):
        make_generator(kind, SpaceSpec(n_nodes=5, d_ops=2), n_max=4)


def test_invalid_model_config(tiny):
    with pytest.raises(ValueError):
        GraphGenerator(tiny, K=0)


@pytest.mark.parametrize("kind", KINDS)
def test_shape_errors(tiny, nb101, kind):
    gen = _small(kind, tiny)
    with pytest.raises(GeneratorShapeError):
        gen.log_prob(new_graph(4, "000000", [0, 0, 0, 0]))
    with pytest.raises(GeneratorShapeError):
        gen.log_prob(new_graph(3, "000", [0, 2, 0]))
    gen101 = _small(kind, nb101)
    bad = new_graph(7, "1" + "0" * 20, [1, 0, 0, 0, 0, 0, 0], roles=(0, 6))
    with pytest.raises(GeneratorShapeError, match="node 0"):
        gen101.log_prob(bad)


@pytest.mark.parametrize("kind", KINDS)
def test_save_load_round_trip(tmp_path, tiny, kind):
    gen = _small(kind, tiny, seed=5)
    path = tmp_path / "gen.json"
    gen.save(path)
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1 and isinstance(doc["params"]["gru_wi"]["data"], list)
    back = load_generator(path)
    assert type(back) is type(gen) and back.config() == gen.config()
    assert all(np.array_equal(back.params[k].data, gen.params[k].data) for k in gen.params)
    assert back.sample(np.random.default_rng(1), 10) == gen.sample(np.random.default_rng(1), 10)


def test_compact_state_dict_round_trip(tiny):
    from archgen.generator import from_state_dict
    gen = _small("graph", tiny, seed=5)
    back = from_state_dict(json.loads(json.dumps(gen.state_dict(compact=True))))
    assert all(np.array_equal(back.params[k].data, gen.params[k].data) for k in gen.params)


def test_load_rejects_foreign_params(tiny):
    gen = _small("graph", tiny)
    state = gen.state_dict()
    state["params"]["bogus"] = state["params"]["gru_bi"]
    with pytest.raises(KeyError):
        gen.load_params(state["params"])
    state = gen.state_dict()
    del state["params"]["gru_bi"]
    with pytest.raises(KeyError):
        gen.load_params(state["params"])


@pytest.mark.parametrize("kind", KINDS)
def test_role_masking(nb101, kind):
    gen = make_generator(kind, nb101, seed=1)
    ops, _, _ = gen.sample_arrays(np.random.default_rng(0), 10_000)
    assert (ops[:, 0] == 0).all() and (ops[:, 6] == 0).all()
    assert len(np.unique(ops[:, 1:6])) == 3  # inner nodes still free


def test_forced_attributes_contribute_nothing(nb101):
    gen = _small("graph", nb101, seed=1)
    ops, adj, lp = gen.sample_arrays(np.random.default_rng(2), 50)
    graphs = [new_graph(7, "".join("1" if adj[b][i, j] else "0" for i in range(7) for j in range(i)),
                        ops[b].tolist(), roles=(0, 6)) for b in range(50)]
    assert np.max(np.abs(gen.log_prob_many(graphs) - lp)) <= 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_log_prob_gradient(kind, rng):
    space = SpaceSpec(n_nodes=4, d_ops=3)
    gen = _small(kind, space, seed=8, hidden=8, **({"K": 3, "S": 2} if kind == "graph" else {}))
    g = random_graph(rng, 4, 0.5)
    saved = gen.params

    def fn(t):
        gen.params = t
        return T.sum_(gen.log_prob_batch([g]))

    try:
        rep = T.grad_check(fn, {k: v.data for k, v in saved.items()}, max_coords=12)
    finally:
        gen.params = saved
    assert rep.ok, rep.failures[:3]


@pytest.mark.parametrize("kind", KINDS)
def test_score_identity(tiny, kind):
    gen = _small(kind, tiny, seed=6)
    graphs = list(enumerate_space(tiny))
    with Tape() as tape:
        lp = gen.log_prob_batch(graphs)
        loss = T.sum_(T.mul(lp, np.exp(lp.data)))
    grads = tape.backward(loss)
    assert max(np.abs(g).max() for g in grads.values()) <= 1e-6


def test_monotone_in_edge_logits(tiny):
    gen = GraphGenerator(tiny, K=1, S=2, hidden=16, seed=2)
    gen.params["theta_w2"].data *= 0.01
    gen.params["theta_b2"].data[:] = 2.0  # all edge logits positive
    full = new_graph(3, "111", [0, 1, 0])
    before = gen.log_prob(full)
    gen.params["theta_w2"].data *= 2
    gen.params["theta_b2"].data *= 2
    assert gen.log_prob(full) > before


@given(st.integers(0, 2 ** 32 - 1))
def test_log_probs_never_positive(seed):
    gen = RNNGenerator(SpaceSpec(n_nodes=4, d_ops=2), hidden=8, seed=seed % 1000)
    _, _, lp = gen.sample_arrays(np.random.default_rng(seed), 8)
    assert (lp <= 0).all()
