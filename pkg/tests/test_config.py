import json

import pytest

from archgen.config import PRESETS, ConfigError, SearchConfig, config_from_dict, load_config


def test_defaults():
    c = load_config()
    assert (c.generator.K, c.generator.S, c.generator.hidden) == (10, 7, 128)
    t = c.trainer
    assert (t.lr, t.clip, t.minibatch, t.epochs) == (1e-4, 1.0, 16, 2000)
    assert c.samples_per_step == 16 and c.top_k == 8


def test_nasbench101_preset():
    c = load_config(preset="nasbench101")
    assert c.buffer.capacity == 30 and c.trainer.lr == 1e-3
    assert (c.trainer.minibatch, c.trainer.update_every, c.trainer.epochs) == (2, 10, 70)
    assert (c.prior.kind, c.prior.p) == ("erdos-renyi", 0.25)
    assert (c.epsilon.kind, c.epsilon.eps_start, c.epsilon.anneal_steps) == ("linear-anneal", 1.0, 30)
    assert c.space.name == "nasbench101-like"


@pytest.mark.parametrize("name,limit", [("nasbench201", 150), ("nasbench201-cifar100", 80),
                                        ("nasbench201-imagenet16", 40)])
def test_nasbench201_presets(name, limit):
    c = load_config(preset=name)
    assert c.budget.limit == limit and c.buffer.capacity == 15
    assert (c.epsilon.kind, c.epsilon.anneal_steps) == ("step-cutoff", 10)


def test_enas_preset():
    c = load_config(preset="enas-macro-style")
    assert c.samples_per_step == 100 and c.buffer.top_fraction == 0.2 and c.buffer.capacity is None
    assert c.trainer.minibatch == 32
    assert c.buffer.capacity_for(7) == 2 and c.buffer.capacity_for(0) == 1


def test_override_wins(tmp_path):
    c = load_config(preset="nasbench101", overrides={"trainer": {"lr": 5e-4}})
    assert c.trainer.lr == 5e-4 and c.trainer.minibatch == 2
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "nasbench101", "trainer": {"lr": 2e-4}}))
    c = load_config(p)
    assert c.trainer.lr == 2e-4 and c.buffer.capacity == 30
    assert load_config(p, overrides={"trainer": {"lr": 3e-4}}).trainer.lr == 3e-4


@pytest.mark.parametrize("doc,name", [({"foo": 1}, "foo"), ({"trainer": {"foo": 1}}, "trainer.'foo'"),
                                      ({"budget": {"limt": 3}}, "budget.'limt'")])
def test_unknown_keys(tmp_path, doc, name):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match=name):
        load_config(p)


@pytest.mark.parametrize("doc", [{"trainer": {"minibatch": 0}}, {"budget": {"limit": -1}},
                                 {"buffer": {"capacity": 5, "top_fraction": 0.5}}, {"space": "nowhere"},
                                 {"samples_per_step": 0}, {"generator": {"kind": "vae"}}, {"trainer": 3}])
def test_invalid_values(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_unknown_preset_and_malformed_file(tmp_path):
    with pytest.raises(ConfigError, match="preset"):
        load_config(preset="nasbench999")
    p = tmp_path / "c.json"
    p.write_text("{")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(p)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_to_dict_round_trip(name):
    c = load_config(preset=name)
    assert config_from_dict(json.loads(json.dumps(c.to_dict()))) == c


def test_inline_space():
    c = config_from_dict({"space": {"n_nodes": 4, "d_ops": 2}})
    assert isinstance(c, SearchConfig) and c.space.n_nodes == 4
