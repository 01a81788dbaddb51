"""The search loop: sample, evaluate, buffer, train, checkpoint, report."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import SearchConfig, config_from_dict
from .evaluators import (
    BudgetExhausted, BudgetMeter, CachedEvaluator, Evaluator, TabularMiss, synthetic_landscape,
    tabular_load,
)
from .generator import Generator, from_state_dict, make_generator
from .graph import ArchGraph, from_record, graph_stats, to_record
from .priors import GENERATOR, PRIOR, choose_source, epsilon_at
from .rl import ReplayBuffer, SampleRecord, buffer_stats, train_update
from .space import RejectionExhausted, draw_valid, validate
from .tensor import AdamState

log = logging.getLogger("archgen")

TRACE_FIELDS = ("step", "eval_id", "source", "reward", "buffer_mean", "buffer_std", "epsilon", "log_prob",
                "clustering_coefficient", "avg_shortest_path", "cost")
SCATTER_FIELDS = ("clustering_coefficient", "avg_shortest_path", "reward", "source", "step")
STREAMS = ("generator-init", "sampling", "explorer", "trainer-shuffle", "prior", "synthetic-evaluator")
CHECKPOINT_VERSION = 1

TRACE = "trace.csv"
EVALUATIONS = "evaluations.jsonl"
CHECKPOINT = "checkpoint.json"
TOPK = "topk.jsonl"
SUMMARY = "summary.json"
SCATTER = "scatter.csv"
IO_STATS = "io_stats.json"
CONFIG = "config.json"


class CheckpointError(ValueError):
    pass


def substream(master_seed: int, name: str) -> np.random.Generator:
    if master_seed < 0:
        raise ValueError("master_seed must be >= 0")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, zlib.crc32(name.encode())])))


def derived_seed(master_seed: int, name: str) -> int:
    return int(substream(master_seed, name).integers(2 ** 63))


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# --- checkpoint io -------------------------------------------------------------

def _digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, payload: dict) -> None:
    doc = {"format_version": CHECKPOINT_VERSION, "digest": _digest(payload), "payload": payload}
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    os.replace(tmp, path)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None


def _unwrap(doc, path) -> dict:
    if not isinstance(doc, dict) or not {"format_version", "digest", "payload"} <= set(doc):
        raise CheckpointError(f"{path}: corrupt checkpoint (missing envelope fields)")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format_version {doc['format_version']!r}, "
                              f"expected {CHECKPOINT_VERSION}")
    if _digest(doc["payload"]) != doc["digest"]:
        raise CheckpointError(f"{path}: corrupt checkpoint (digest mismatch)")
    return doc["payload"]


def load_checkpoint(path) -> dict:
    return _unwrap(_read_json(path), path)


def generator_from_checkpoint(path) -> Generator:
    """Generator from a run checkpoint or from a standalone generator file."""
    doc = _read_json(path)
    if isinstance(doc, dict) and "params" in doc and "payload" not in doc:
        return from_state_dict(doc)
    payload = _unwrap(doc, path)
    if payload.get("generator") is None:
        raise CheckpointError(f"{path}: checkpoint holds no generator (random-search run)")
    return from_state_dict(payload["generator"])


# --- run state -----------------------------------------------------------------

def build_evaluator(config: SearchConfig) -> Evaluator:
    ec = config.evaluator
    if ec.kind == "tabular":
        return tabular_load(ec.path, d_ops=config.space.d_ops)
    seed = derived_seed(config.master_seed, "synthetic-evaluator") if ec.seed is None else ec.seed
    return synthetic_landscape(config.space, {"kind": ec.landscape, "seed": seed, **ec.params})


def build_generator(config: SearchConfig) -> Generator:
    gc = config.generator
    seed = derived_seed(config.master_seed, "generator-init") if gc.seed is None else gc.seed
    return make_generator(gc.kind, config.space, K=gc.K, S=gc.S, hidden=gc.hidden, seed=seed)


@dataclass
class _Loop:
    step: int = 0
    slot: int = 0
    next_eval_id: int = 0
    rows: int = 0
    since_update: int = 0
    updates: int = 0
    fresh_in_step: bool = False
    stalled_steps: int = 0


@dataclass
class RunArtifacts:
    out_dir: Path
    trace: Path
    evaluations: Path
    checkpoint: Optional[Path]
    topk: Path
    summary: dict
    scatter: Path
    io_stats: Path


class _Run:
    def __init__(self, config: SearchConfig, mode: str):
        self.config = config
        self.mode = mode
        self.out = Path(config.out_dir)
        self.rng = {name: substream(config.master_seed, name) for name in STREAMS}
        self.evaluator = build_evaluator(config)
        bc = config.budget
        self.meter = BudgetMeter(bc.limit, bc.unit)
        self.cached = CachedEvaluator(self.evaluator, self.meter, charge_cached=bc.count_repeats)
        self.buffer = ReplayBuffer(config.buffer.capacity_for(0))
        self.gen = build_generator(config) if mode == "search" else None
        self.opt = AdamState(lr=config.trainer.lr)
        self.loop = _Loop()
        self.last_metrics: dict = {}

    # state <-> checkpoint payload

    def payload(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config.to_dict(),
            "generator": None if self.gen is None else self.gen.state_dict(compact=True),
            "optimizer": self.opt.to_dict(),
            "buffer": self.buffer.to_dict(),
            "rng": {k: g.bit_generator.state for k, g in self.rng.items()},
            "meter": self.meter.to_dict(),
            "cache": self.cached.cache_dict(),
            "loop": vars(self.loop).copy(),
        }

    def restore(self, p: dict):
        if p["mode"] != self.mode:
            raise CheckpointError(f"checkpoint is from a {p['mode']!r} run, not {self.mode!r}")
        if p["config"] != json.loads(json.dumps(self.config.to_dict())):
            raise CheckpointError("checkpoint config differs from the requested config")
        if p["generator"] is not None:
            self.gen.load_params(p["generator"]["params"])
            self.opt = AdamState.from_dict(p["optimizer"], self.gen.params)
        self.buffer = ReplayBuffer.from_dict(p["buffer"])
        for k, state in p["rng"].items():
            self.rng[k].bit_generator.state = state
        self.meter = BudgetMeter.from_dict(p["meter"])
        self.cached.meter = self.meter
        self.cached.load_cache(p["cache"])
        self.loop = _Loop(**p["loop"])

    # sampling

    def epsilon(self, step: int) -> float:
        return 1.0 if self.mode == "random" else epsilon_at(self.config.epsilon, step)

    def draw(self, eps: float):
        source = choose_source(self.rng["explorer"], eps)
        space = self.config.space
        if source == PRIOR:
            prior, rng = self.config.prior, self.rng["prior"]
            sampler = lambda: prior.sample(space, rng)  # noqa: E731
        else:
            gen, rng = self.gen, self.rng["sampling"]
            sampler = lambda: gen.sample_graph(rng)  # noqa: E731
        try:
            return source, draw_valid(sampler, space, self.config.max_tries)
        except RejectionExhausted as exc:
            log.warning("candidate skipped: %s", exc)
            return source, None


def _truncate_lines(path: Path, keep: int):
    with open(path) as fh:
        lines = fh.readlines()
    with open(path, "w") as fh:
        fh.writelines(lines[:keep])


def run_search(config: SearchConfig, resume: bool = False, mode: str = "search",
               max_updates: Optional[int] = None) -> RunArtifacts:
    """Run until the budget (or a step/stall guard) ends it.

    ``mode="random"`` draws every candidate from the prior and never trains.
    ``max_updates`` halts after that many trainer updates, leaving a
    checkpoint that ``resume=True`` continues from.
    """
    if mode not in ("search", "random"):
        raise ValueError(f"unknown mode {mode!r}")
    t0 = time.perf_counter()
    run = _Run(config, mode)
    out = run.out
    out.mkdir(parents=True, exist_ok=True)
    trace_path, evals_path, ckpt_path = out / TRACE, out / EVALUATIONS, out / CHECKPOINT
    if resume:
        if not ckpt_path.exists():
            raise FileNotFoundError(f"no checkpoint to resume in {out}")
        run.restore(load_checkpoint(ckpt_path))
        _truncate_lines(trace_path, run.loop.rows + 1)
        _truncate_lines(evals_path, run.loop.rows)
    else:
        with open(out / CONFIG, "w") as fh:
            json.dump(config.to_dict(), fh, indent=2)
        with open(trace_path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(TRACE_FIELDS)
        open(evals_path, "w").close()
        if ckpt_path.exists():
            ckpt_path.unlink()

    stop = _loop(run, trace_path, evals_path, ckpt_path, max_updates)
    if stop == "halted":
        return _artifacts(run, None, stop, time.perf_counter() - t0)
    if run.gen is not None:
        save_checkpoint(ckpt_path, run.payload())
    topk = _write_topk(run, out / TOPK)
    return _artifacts(run, topk, stop, time.perf_counter() - t0)


def _loop(run: _Run, trace_path, evals_path, ckpt_path, max_updates) -> str:
    cfg, L = run.config, run.loop
    trainer = cfg.trainer
    with open(trace_path, "a", newline="") as tf, open(evals_path, "a") as ef:
        writer = csv.writer(tf, lineterminator="\n")
        while True:
            if cfg.budget.unit == "evaluations" and run.meter.exhausted:
                return "budget"
            if cfg.budget.max_steps is not None and L.step >= cfg.budget.max_steps:
                return "max-steps"
            eps = run.epsilon(L.step)
            while L.slot < cfg.samples_per_step:
                # candidates up to the next possible update share one generator state
                seg = cfg.samples_per_step - L.slot
                if run.mode == "search":
                    seg = min(seg, trainer.update_every - L.since_update)
                drawn = [run.draw(eps) for _ in range(seg)]
                valid = [d.graph for _, d in drawn if d is not None]
                pre = iter(run.cached.prefetch(valid, cfg.workers) if cfg.workers > 1 else [None] * len(valid))
                for source, d in drawn:
                    L.slot += 1
                    if d is None:
                        continue
                    value = next(pre)
                    try:
                        if isinstance(value, Exception):
                            raise value
                        result, fresh = run.cached.query(d.graph, value)
                    except BudgetExhausted:
                        return "budget"
                    except TabularMiss as exc:
                        log.info("candidate rejected: %s", exc)
                        continue
                    except Exception as exc:  # evaluator failure: skip the candidate
                        log.warning("evaluation failed, candidate skipped: %s", exc)
                        continue
                    if not fresh and not cfg.budget.count_repeats:
                        continue
                    L.fresh_in_step = L.fresh_in_step or fresh
                    _record(run, writer, ef, source, d, result, eps)
                    tf.flush()
                    ef.flush()
                    if run.mode == "search" and L.since_update >= trainer.update_every:
                        run.last_metrics = train_update(run.gen, run.buffer, run.opt, trainer,
                                                        run.rng["trainer-shuffle"])
                        L.updates += 1
                        L.since_update = 0
                        save_checkpoint(ckpt_path, run.payload())
                        if cfg.keep_checkpoints:
                            save_checkpoint(run.out / f"checkpoint_{L.updates:05d}.json", run.payload())
                        if max_updates is not None and L.updates >= max_updates:
                            return "halted"
            L.stalled_steps = 0 if L.fresh_in_step else L.stalled_steps + 1
            L.fresh_in_step = False
            L.slot = 0
            L.step += 1
            if L.stalled_steps >= cfg.budget.stall_steps:
                return "stalled"


def _record(run: _Run, writer, ef, source, d, result, eps):
    L = run.loop
    rec = SampleRecord(d.graph, result.reward, source, L.step, L.next_eval_id, raw=d.raw)
    run.buffer.insert(rec)
    want = run.config.buffer.capacity_for(L.rows + 1)
    if want != run.buffer.capacity:
        run.buffer.resize(want)
    stats = buffer_stats(run.buffer)
    gs = graph_stats(d.graph)
    log_prob = d.payload if source == GENERATOR else None
    cost = run.meter.price(result)
    writer.writerow([_fmt(v) for v in (L.step, L.next_eval_id, source, result.reward, stats.baseline, stats.sigma,
                                       eps, log_prob, gs.clustering_coefficient, gs.avg_shortest_path, cost)])
    ef.write(json.dumps({"eval_id": L.next_eval_id, "step": L.step, "source": source,
                         "reward": result.reward, "graph": to_record(d.graph), "raw": to_record(d.raw)}) + "\n")
    L.next_eval_id += 1
    L.rows += 1
    L.since_update += 1


def _write_topk(run: _Run, path: Path) -> List[ArchGraph]:
    """Final samples from the generator (or top buffer graphs without one), then the best graph found."""
    k = run.config.top_k
    rows, graphs = [], []
    if run.gen is not None:
        rng = run.rng["sampling"]
        for _ in range(k):
            try:
                d = draw_valid(lambda: run.gen.sample_graph(rng), run.config.space, run.config.max_tries)
            except RejectionExhausted as exc:
                log.warning("top-k sample skipped: %s", exc)
                continue
            graphs.append(d.graph)
            rows.append({"label": "generator-sample", "graph": to_record(d.graph), "log_prob": d.payload})
    else:
        for r in run.buffer.records[:k]:
            graphs.append(r.graph)
            rows.append({"label": "top-evaluated", "graph": to_record(r.graph), "reward": r.reward})
    best = run.buffer.best()
    if best is not None:
        rows.append({"label": "best-found", "graph": to_record(best.graph), "reward": best.reward,
                     "eval_id": best.eval_id})
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return graphs


def _artifacts(run: _Run, topk, stop: str, wall: float) -> RunArtifacts:
    out = run.out
    best = run.buffer.best()
    summary = {
        "mode": run.mode,
        "stop_reason": stop,
        "best_reward": None if best is None else best.reward,
        "best_graph": None if best is None else to_record(best.graph),
        "evaluations": run.loop.rows,
        "budget_consumed": run.meter.consumed,
        "budget_unit": run.meter.unit,
        "updates": run.loop.updates,
        "steps": run.loop.step,
        "wall_time": wall,
    }
    with open(out / SUMMARY, "w") as fh:
        json.dump(summary, fh, indent=2)
    scatter, io_stats = out / SCATTER, out / IO_STATS
    if topk is not None:
        emit_analysis(out / TRACE, topk, scatter, io_stats)
    return RunArtifacts(out, out / TRACE, out / EVALUATIONS, out / CHECKPOINT if (out / CHECKPOINT).exists() else None,
                        out / TOPK, summary, scatter, io_stats)


# --- analysis ------------------------------------------------------------------

def read_trace(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_analysis(trace_path, graphs: List[ArchGraph], scatter_path, stats_path) -> dict:
    """Per-evaluation scatter rows plus io path statistics averaged over ``graphs``."""
    rows = read_trace(trace_path)
    with open(scatter_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCATTER_FIELDS)
        for r in rows:
            w.writerow([r[f] for f in SCATTER_FIELDS])
    io = [graph_stats(g) for g in graphs]
    avg = [s.io_avg_path for s in io if s.io_avg_path is not None]
    longest = [s.io_longest_path for s in io if s.io_longest_path is not None and s.io_longest_path >= 0]
    table = {
        "n_graphs": len(graphs),
        "io_avg_path": float(np.mean(avg)) if avg else None,
        "io_longest_path": float(np.mean(longest)) if longest else None,
    }
    with open(stats_path, "w") as fh:
        json.dump(table, fh, indent=2)
    return table


def load_run_config(out_dir) -> SearchConfig:
    with open(Path(out_dir) / CONFIG) as fh:
        return config_from_dict(json.load(fh))


def read_evaluated(out_dir, d_ops: Optional[int] = None) -> List[ArchGraph]:
    with open(Path(out_dir) / EVALUATIONS) as fh:
        return [from_record(json.loads(line)["graph"], d_ops=d_ops) for line in fh if line.strip()]


def check_artifacts(out_dir, config: SearchConfig) -> List[str]:
    """Problems found in a finished run directory (empty when all graphs validate)."""
    problems = []
    for i, g in enumerate(read_evaluated(out_dir)):
        if validate(g, config.space):
            problems.append(f"evaluation {i} violates the space: {validate(g, config.space)}")
    with open(Path(out_dir) / TOPK) as fh:
        for line in fh:
            g = from_record(json.loads(line)["graph"])
            if validate(g, config.space):
                problems.append(f"top-k graph violates the space: {validate(g, config.space)}")
    return problems


__all__ = ["run_search", "emit_analysis", "save_checkpoint", "load_checkpoint", "CheckpointError", "RunArtifacts",
           "TRACE_FIELDS", "SCATTER_FIELDS", "STREAMS", "substream", "derived_seed", "generator_from_checkpoint",
           "read_trace", "load_run_config", "check_artifacts"]
