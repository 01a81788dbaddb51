"""Command-line entry point: ``archgen <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from .config import load_config
from .engine import generator_from_checkpoint, run_search
from .evaluators import tabular_load
from .graph import dumps, graph_stats, read_graphs, to_record, write_graphs
from .space import PRESETS, SpaceSpec, draw_valid, enumerate_space, get_space


def _config(args):
    overrides = {"out_dir": args.out}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    return load_config(args.config, preset=args.preset, overrides=overrides)


def cmd_search(args) -> int:
    art = run_search(_config(args), resume=args.resume)
    print(json.dumps(art.summary))
    return 0


def cmd_baseline_random(args) -> int:
    art = run_search(_config(args), resume=args.resume, mode="random")
    print(json.dumps(art.summary))
    return 0


def cmd_sample(args) -> int:
    gen = generator_from_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    graphs = [draw_valid(lambda: gen.sample_graph(rng), gen.space, args.max_tries).graph for _ in range(args.num)]
    write_graphs(args.out, graphs)
    print(f"wrote {len(graphs)} graphs to {args.out}")
    return 0


def cmd_stats(args) -> int:
    for g in read_graphs(args.graphs):
        print(json.dumps({"graph": to_record(g), **graph_stats(g).as_dict()}))
    return 0


def cmd_enumerate(args) -> int:
    if args.space is not None:
        space = get_space(args.space)
        changes = {k: v for k, v in (("n_nodes", args.n), ("d_ops", args.d)) if v is not None}
        space = dataclasses.replace(space, **changes)
    elif args.n is None or args.d is None:
        raise ValueError("enumerate needs --n and --d, or --space")
    else:
        space = SpaceSpec(n_nodes=args.n, d_ops=args.d)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for g in enumerate_space(space):
            out.write(dumps(g) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_eval_table(args) -> int:
    ev = tabular_load(args.check, d_ops=args.d)
    print(f"ok: {len(ev)} records")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="archgen", description="Generative architecture search over attributed DAGs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn, help_ in (("search", cmd_search, "run a learned-generator search"),
                            ("baseline-random", cmd_baseline_random, "prior-only search under the same budget")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--preset", help="named preset applied beneath the config file")
        s.add_argument("--seed", type=int, help="master seed")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
        s.set_defaults(fn=fn)

    s = sub.add_parser("sample", help="sample graphs from a checkpointed generator")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--num", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-tries", type=int, default=100)
    s.set_defaults(fn=cmd_sample)

    s = sub.add_parser("stats", help="structural statistics of a graph file")
    s.add_argument("--graphs", required=True)
    s.set_defaults(fn=cmd_stats)

    s = sub.add_parser("enumerate", help="list every valid graph of a small space")
    s.add_argument("--n", type=int)
    s.add_argument("--d", type=int)
    s.add_argument("--space", choices=sorted(PRESETS))
    s.add_argument("--out")
    s.set_defaults(fn=cmd_enumerate)

    s = sub.add_parser("eval-table", help="validate a tabular evaluator file")
    s.add_argument("--check", required=True)
    s.add_argument("--d", type=int, help="op vocabulary size to check against")
    s.set_defaults(fn=cmd_eval_table)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
