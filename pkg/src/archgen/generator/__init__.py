"""Architecture generators sharing one sample / log-prob interface."""
import json

from ..space import SpaceSpec
from .base import FORMAT_VERSION, Generator, GeneratorShapeError
from .graph_gen import GraphGenerator
from .rnn import RNNGenerator

KINDS = {"graph": GraphGenerator, "rnn": RNNGenerator}


def make_generator(kind: str, space: SpaceSpec, K: int = 10, S: int = 7, hidden: int = 128,
                   n_max=None, seed: int = 0) -> Generator:
    if kind == "graph":
        return GraphGenerator(space, K=K, S=S, hidden=hidden, n_max=n_max, seed=seed)
    if kind == "rnn":
        return RNNGenerator(space, hidden=hidden, n_max=n_max, seed=seed)
    raise ValueError(f"unknown generator kind {kind!r}")


def from_state_dict(state: dict) -> Generator:
    if state.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported generator format_version {state.get('format_version')!r}")
    space = SpaceSpec(**state["space"])
    cfg = dict(state["config"])
    gen = make_generator(state["kind"], space, **cfg)
    gen.load_params(state["params"])
    return gen


def load_generator(path) -> Generator:
    with open(path) as fh:
        return from_state_dict(json.load(fh))


__all__ = ["Generator", "GeneratorShapeError", "GraphGenerator", "RNNGenerator", "make_generator",
           "from_state_dict", "load_generator", "KINDS"]
