"""Search configuration: defaults, named presets, strict JSON loading."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .priors import EpsilonSchedule, PriorSpec
from .rl import TrainerConfig
from .space import SpaceSpec, get_space


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "graph"
    K: int = 10
    S: int = 7
    hidden: int = 128
    seed: Optional[int] = None  # None: derived from master_seed

    def __post_init__(self):
        if self.kind not in ("graph", "rnn"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.K < 1 or self.S < 0 or self.hidden < 1:
            raise ValueError("need K >= 1, S >= 0, hidden >= 1")


@dataclass(frozen=True)
class BufferConfig:
    capacity: Optional[int] = 30
    top_fraction: Optional[float] = None

    def __post_init__(self):
        if (self.capacity is None) == (self.top_fraction is None):
            raise ValueError("set exactly one of buffer.capacity and buffer.top_fraction")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("buffer.capacity must be >= 1")
        if self.top_fraction is not None and not 0 < self.top_fraction <= 1:
            raise ValueError("buffer.top_fraction must lie in (0, 1]")

    def capacity_for(self, n_evaluated: int) -> int:
        if self.capacity is not None:
            return self.capacity
        return max(1, math.ceil(self.top_fraction * n_evaluated))


@dataclass(frozen=True)
class EvaluatorConfig:
    kind: str = "synthetic"              # synthetic | tabular
    landscape: str = "hashed-random"     # synthetic only
    seed: Optional[int] = None           # None: derived from master_seed
    path: Optional[str] = None           # tabular only
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("synthetic", "tabular"):
            raise ValueError(f"unknown evaluator kind {self.kind!r}")
        if self.kind == "tabular" and not self.path:
            raise ValueError("tabular evaluator needs evaluator.path")


@dataclass(frozen=True)
class BudgetConfig:
    unit: str = "evaluations"
    limit: float = 100
    count_repeats: bool = False  # bill and trace repeated queries of cached graphs
    max_steps: Optional[int] = None
    stall_steps: int = 50        # stop after this many steps without a fresh evaluation

    def __post_init__(self):
        if self.unit not in ("evaluations", "cost"):
            raise ValueError(f"unknown budget unit {self.unit!r}")
        if not self.limit >= 0:
            raise ValueError("budget.limit must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("budget.max_steps must be >= 0")
        if self.stall_steps < 1:
            raise ValueError("budget.stall_steps must be >= 1")


@dataclass(frozen=True)
class SearchConfig:
    space: SpaceSpec = field(default_factory=lambda: get_space("randwire-cell"))
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    prior: PriorSpec = field(default_factory=PriorSpec)
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    samples_per_step: int = 16
    max_tries: int = 100
    top_k: int = 8
    workers: int = 1
    keep_checkpoints: bool = False
    out_dir: str = "runs/default"
    master_seed: int = 0

    def __post_init__(self):
        if self.samples_per_step < 1 or self.max_tries < 1 or self.top_k < 0 or self.workers < 1:
            raise ValueError("samples_per_step, max_tries and workers must be >= 1, top_k >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["space"] = self.space.to_dict()
        return d


_SECTIONS = {
    "generator": GeneratorConfig, "prior": PriorSpec, "epsilon": EpsilonSchedule, "trainer": TrainerConfig,
    "buffer": BufferConfig, "evaluator": EvaluatorConfig, "budget": BudgetConfig,
}
_SCALARS = {"samples_per_step", "max_tries", "top_k", "workers", "keep_checkpoints", "out_dir", "master_seed"}

PRESETS = {
    "nasbench101": {
        "space": "nasbench101-like",
        "prior": {"kind": "erdos-renyi", "p": 0.25},
        "epsilon": {"kind": "linear-anneal", "eps_start": 1.0, "anneal_steps": 30},
        "buffer": {"capacity": 30},
        "trainer": {"update_every": 10, "epochs": 70, "lr": 1e-3, "minibatch": 2},
        "samples_per_step": 1,
    },
    "nasbench201": {
        "epsilon": {"kind": "step-cutoff", "eps_start": 1.0, "anneal_steps": 10},
        "buffer": {"capacity": 15},
        "budget": {"unit": "evaluations", "limit": 150},
        "samples_per_step": 1,
    },
    "nasbench201-cifar100": {"base": "nasbench201", "budget": {"limit": 80}},
    "nasbench201-imagenet16": {"base": "nasbench201", "budget": {"limit": 40}},
    "enas-macro-style": {
        "space": "enas-macro",
        "samples_per_step": 100,
        "buffer": {"capacity": None, "top_fraction": 0.2},
        "trainer": {"minibatch": 32, "update_every": 100},
    },
}


def _preset_layers(name: str) -> list:
    try:
        p = copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    base = p.pop("base", None)
    return (_preset_layers(base) if base else []) + [p]


def _check_keys(layer: dict, where: str):
    if not isinstance(layer, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    for key, value in layer.items():
        path = f"{where}.{key}" if where else key
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{path}: expected an object")
            known = {f.name for f in fields(_SECTIONS[key])}
            for sub in value:
                if sub not in known:
                    raise ConfigError(f"unknown config key {path}.{sub!r}")
        elif key not in _SCALARS and key not in ("space", "preset"):
            raise ConfigError(f"unknown config key {path!r}")


def _merge(base: dict, layer: dict) -> dict:
    out = dict(base)
    for key, value in layer.items():
        if key in _SECTIONS:
            section = dict(out.get(key, {}))
            section.update(value)
            out[key] = section
        else:
            out[key] = value
    return out


def config_from_dict(d: dict) -> SearchConfig:
    _check_keys(d, "")
    kwargs = {}
    try:
        if "space" in d:
            kwargs["space"] = get_space(d["space"])
        for key, cls in _SECTIONS.items():
            if key in d:
                kwargs[key] = cls(**d[key])
        for key in _SCALARS:
            if key in d:
                kwargs[key] = d[key]
        return SearchConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path=None, preset: Optional[str] = None, overrides: Optional[dict] = None) -> SearchConfig:
    """Layers, later winning: defaults, preset, file, ``overrides``.

    A ``"preset"`` key inside the file is honoured when no preset argument
    is given.
    """
    file_layer = {}
    if path is not None:
        try:
            with open(path) as fh:
                file_layer = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed config: {exc}") from None
    _check_keys(file_layer, "")
    preset = preset or file_layer.pop("preset", None)
    file_layer.pop("preset", None)
    merged: dict = {}
    layers = (_preset_layers(preset) if preset else []) + [file_layer]
    if overrides:
        _check_keys(overrides, "")
        layers.append(overrides)
    for layer in layers:
        merged = _merge(merged, layer)
    return config_from_dict(merged)
