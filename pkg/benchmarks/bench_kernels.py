"""Compare the numba and pure-numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--end-to-end]

Kernel timings call both implementations directly in one process and check
that their outputs agree bit for bit. ``--end-to-end`` also times generator
sampling in two subprocesses, one with ARCHGEN_DISABLE_NUMBA=1.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from archgen._kernels import _numba, _numpy

E2E = """
import time, numpy as np
from archgen._kernels import BACKEND
from archgen.generator import make_generator
from archgen.space import PRESETS
gen = make_generator("graph", PRESETS["nasbench101-like"], seed=0)
gen.sample_arrays(np.random.default_rng(0), 4)
t = time.perf_counter()
gen.sample_arrays(np.random.default_rng(1), 256)
print(BACKEND, time.perf_counter() - t)
"""


def cases(rng):
    edges, nodes, width = 20_000, 2_000, 128
    values = rng.normal(size=(edges, width))
    seg = np.sort(rng.integers(0, nodes, edges))
    n = 32
    adj = np.tril(rng.random((n, n)) < 0.2, -1)
    return {
        "segment_sum": (values, seg, nodes),
        "closure": (adj,),
        "undirected_apsp": (adj,),
        "triangles": (adj,),
        "io_paths": (adj, 0, n - 1),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  identical")
    for name, inputs in cases(rng).items():
        fast, slow = getattr(_numba, name), getattr(_numpy, name)
        fast(*inputs)  # compile outside the timed region
        t_np = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x  {same(fast(*inputs), slow(*inputs))}")

    if args.end_to_end:
        for disable in ("0", "1"):
            env = dict(os.environ, ARCHGEN_DISABLE_NUMBA=disable)
            out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
            backend, secs = out.stdout.split()
            print(f"sample 256 nasbench101-like graphs, {backend} backend: {float(secs):.2f}s")


if __name__ == "__main__":
    main()
