import json
import threading

import pytest
from hypothesis import given

from archgen.graph import avg_shortest_path, canonical_hash, density, new_graph, to_record
from archgen.space import PRESETS, SpaceSpec, enumerate_space
from archgen.evaluators import (
    BudgetExhausted, BudgetMeter, EvalResult, Evaluator, SyntheticEvaluator, TableEntry, TabularEvaluator,
    TabularFormatError, TabularMiss, synthetic_landscape, tabular_dump, tabular_load, tabulate, with_cache_and_budget,
)
from conftest import graphs

TINY = PRESETS["tiny"]
G3 = [new_graph(3, b, ops) for b, ops in (("000", [0, 0, 0]), ("101", [1, 0, 1]), ("111", [0, 1, 1]))]


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def _records():
    return [{"graph": to_record(g), "reward": 0.1 * (i + 1), "test_reward": None, "cost": 2.0 + i}
            for i, g in enumerate(G3)]


def test_eval_result_validation():
    with pytest.raises(ValueError):
        EvalResult(float("inf"))
    with pytest.raises(ValueError):
        EvalResult(0.5, -1.0)


def test_tabular_three_records(tmp_path):
    p = tmp_path / "t.jsonl"
    _write(p, _records())
    ev = tabular_load(p, d_ops=2)
    assert len(ev) == 3
    assert [ev.evaluate(g).reward for g in G3] == [0.1, 0.2, pytest.approx(0.3)]
    assert ev.evaluate(G3[2]).cost == 4.0
    missing = new_graph(3, "001", [0, 0, 0])
    assert missing not in ev
    with pytest.raises(TabularMiss):
        ev.evaluate(missing)


def test_tabular_duplicate_names_line(tmp_path):
    p = tmp_path / "t.jsonl"
    recs = _records()
    _write(p, recs + [dict(recs[1], reward=0.9)])
    with pytest.raises(TabularFormatError, match="line 4.*first listed on line 2") as info:
        tabular_load(p)
    assert info.value.line == 4


@pytest.mark.parametrize("bad,msg", [("{nope", "malformed"), ('{"reward": 1}', "graph"),
                                     ('{"graph": {"n": 1, "bits": "", "ops": [0]}, "reward": 1, "x": 2}',
                                      "unknown field 'x'")])
def test_tabular_parse_errors(tmp_path, bad, msg):
    p = tmp_path / "t.jsonl"
    p.write_text(json.dumps(_records()[0]) + "\n" + bad + "\n")
    with pytest.raises(TabularFormatError, match=f"line 2: .*{msg}"):
        tabular_load(p)


def test_tabular_op_range_check(tmp_path):
    p = tmp_path / "t.jsonl"
    _write(p, _records())
    with pytest.raises(TabularFormatError, match="line 2"):
        tabular_load(p, d_ops=1)


def test_tabular_round_trip(tmp_path):
    p, q = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    _write(p, _records())
    tabular_dump(tabular_load(p), q)
    parse = lambda f: [json.loads(line) for line in f.read_text().splitlines()]
    assert parse(q) == parse(p)


def test_tabulate_freezes_rewards():
    syn = SyntheticEvaluator(TINY, "hashed-random", seed=3)
    table = tabulate(syn, enumerate_space(TINY))
    assert len(table) == 64
    assert all(table.evaluate(g) == syn.evaluate(g) for g in enumerate_space(TINY))


def test_hashed_random_single_optimum():
    for seed in range(5):
        ev = SyntheticEvaluator(TINY, "hashed-random", seed=seed)
        rewards = [ev.reward(g) for g in enumerate_space(TINY)]
        assert rewards.count(1.0) == 1
        assert all(0 <= r <= 1 for r in rewards)
        assert ev.reward(ev.optimum) == 1.0


def test_hashed_random_deterministic():
    a, b = SyntheticEvaluator(TINY, seed=9), SyntheticEvaluator(TINY, seed=9)
    assert all(a.evaluate(g) == b.evaluate(g) for g in enumerate_space(TINY))
    c = SyntheticEvaluator(TINY, seed=10)
    assert any(a.reward(g) != c.reward(g) for g in enumerate_space(TINY))


def test_planted_stats_optimum(nb101):
    ev = SyntheticEvaluator(nb101, "planted-stats", seed=4)
    g = ev.optimum
    assert ev.tau == avg_shortest_path(g) and ev.rho == density(g)
    assert all(op == ev.target_op for op in g.node_ops[1:-1])
    assert ev.evaluate(g).reward == 1.0


def test_planted_stats_explicit_optimum():
    space = SpaceSpec(n_nodes=4, d_ops=3)
    g = new_graph(4, "101011", [2, 2, 2, 2])
    ev = SyntheticEvaluator(space, "planted-stats", optimum=g, target_op=2)
    assert ev.reward(g) == 1.0
    worse = new_graph(4, "101011", [2, 0, 2, 2])
    assert ev.reward(worse) == pytest.approx(1 - 0.3 * 0.25, abs=1e-12)


@given(graphs(max_n=5, d_ops=3))
def test_planted_stats_bounded(g):
    space = SpaceSpec(n_nodes=g.n_nodes, d_ops=3, io_roles=g.roles is not None)
    if g.roles is not None and tuple(g.roles) != (0, g.n_nodes - 1):
        return
    ev = SyntheticEvaluator(space, "planted-stats", tau=1.5, rho=0.4, target_op=1)
    assert 0.0 <= ev.reward(g) <= 1.0


def test_landscape_factory():
    ev = synthetic_landscape(TINY, {"kind": "planted-stats", "seed": 2, "weights": [1, 0, 0]})
    assert ev.kind == "planted-stats" and ev.weights == (1.0, 0.0, 0.0)
    back = synthetic_landscape(TINY, {"kind": "hashed-random", "seed": 2,
                                      "optimum": to_record(new_graph(3, "010", [1, 1, 0]))})
    assert back.reward(new_graph(3, "010", [1, 1, 0])) == 1.0
    with pytest.raises(ValueError):
        synthetic_landscape(TINY, {"kind": "nope"})


class Counting(Evaluator):
    def __init__(self, costs=None):
        self.calls = 0
        self.costs = costs or {}

    def evaluate(self, g):
        self.calls += 1
        return EvalResult(0.5, self.costs.get(g.bits, 1.0))


def test_cache_charges_once():
    inner = Counting()
    ev = with_cache_and_budget(inner, BudgetMeter(10))
    ev.evaluate(G3[0])
    r, fresh = ev.query(G3[0])
    assert not fresh and ev.meter.consumed == 1 and inner.calls == 1


def test_charge_cached_bills_repeats():
    inner = Counting()
    ev = with_cache_and_budget(inner, BudgetMeter(10), charge_cached=True)
    ev.evaluate(G3[0])
    ev.evaluate(G3[0])
    assert ev.meter.consumed == 2 and inner.calls == 1


def test_budget_limit_by_count():
    ev = with_cache_and_budget(Counting(), BudgetMeter(3))
    four = list(enumerate_space(TINY))[:4]
    for g in four[:3]:
        ev.evaluate(g)
    with pytest.raises(BudgetExhausted):
        ev.evaluate(four[3])
    assert ev.meter.consumed == 3 and ev.meter.exhausted


def test_budget_limit_by_cost():
    inner = Counting({"000": 5.0, "101": 7.0})
    ev = with_cache_and_budget(inner, BudgetMeter(10, "cost"))
    ev.evaluate(G3[0])
    with pytest.raises(BudgetExhausted):
        ev.evaluate(G3[1])
    assert ev.meter.consumed == 5.0
    assert canonical_hash(G3[1]) not in ev.cache


def test_zero_budget():
    with pytest.raises(BudgetExhausted):
        with_cache_and_budget(Counting(), BudgetMeter(0)).evaluate(G3[0])


def test_meter_validation_and_round_trip():
    with pytest.raises(ValueError):
        BudgetMeter(-1)
    with pytest.raises(ValueError):
        BudgetMeter(3, "seconds")
    m = BudgetMeter(7, "cost")
    m.charge(2.5)
    assert vars(BudgetMeter.from_dict(m.to_dict())) == vars(m)


def test_cache_transparent_and_monotone(rng):
    syn = SyntheticEvaluator(TINY, seed=1)
    ev = with_cache_and_budget(syn, BudgetMeter(64))
    prev = 0.0
    for i in rng.integers(0, 64, 300):
        g = list(enumerate_space(TINY))[i]
        assert ev.evaluate(g) == syn.evaluate(g)
        assert prev <= ev.meter.consumed <= ev.meter.limit
        prev = ev.meter.consumed


def test_concurrent_queries_charge_each_graph_once():
    syn = SyntheticEvaluator(TINY, seed=1)
    ev = with_cache_and_budget(syn, BudgetMeter(100))
    gs = list(enumerate_space(TINY))
    threads = [threading.Thread(target=lambda: [ev.evaluate(g) for g in gs]) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ev.meter.consumed == 64


def test_prefetch_does_not_cache_or_charge():
    inner = TabularEvaluator([TableEntry(G3[0], 0.4, None, 1.0)])
    ev = with_cache_and_budget(inner, BudgetMeter(5))
    out = ev.prefetch([G3[0], G3[1]], workers=2)
    assert out[0] == EvalResult(0.4, 1.0) and isinstance(out[1], TabularMiss)
    assert ev.meter.consumed == 0 and not ev.cache
    assert ev.query(G3[0], out[0]) == (out[0], True)


def test_cache_dict_round_trip():
    ev = with_cache_and_budget(SyntheticEvaluator(TINY, seed=1), BudgetMeter(5))
    ev.evaluate(G3[1])
    other = with_cache_and_budget(Counting(), BudgetMeter(5))
    other.load_cache(json.loads(json.dumps(ev.cache_dict())))
    assert other.query(G3[1]) == (ev.evaluate(G3[1]), False)
