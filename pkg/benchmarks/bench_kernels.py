"""Compiled vs pure-Python kernels, plus end-to-end legalization under each backend.

    python benchmarks/bench_kernels.py [--repeat N]

The end-to-end part re-runs itself with PATGEN_PURE_PYTHON=1 to time the fallback.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from patgen import kernels, legalize
from patgen.diffusion import make_rng
from patgen.rules import TOY_RULES
from patgen.toy import toy_library


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_table(repeat):
    rng = make_rng(0)
    rows = []
    x = rng.integers(0, 2, (256, 256)).astype(np.uint8)
    d = rng.integers(0, 2, (512, 256)).astype(np.uint8)
    backends = {"python": kernels.python}
    if kernels.compiled is not None:
        backends["compiled"] = kernels.compiled
    for name, mod in backends.items():
        rows.append(("hamming 256x512x256", name, best_of(lambda: mod.hamming(x, d), repeat, 5)))
    rules = TOY_RULES.for_side(16)
    problems = []
    for pat in toy_library(20, seed=1):
        c = legalize._compile(legalize.extract_constraints(pat.topology), rules).with_slack(1.0, 2.0)
        z = rng.uniform(0.2, 2.0, 32)
        problems.append((c, z))
    for name, mod in backends.items():
        def run():
            for c, z in problems:
                mod.penalty(z, c.nx, c.lin_start, c.lin_stop, c.lin_bound, c.poly_ptr,
                            c.cell_i, c.cell_j, c.area_lo, c.area_hi, True)
        rows.append(("penalty+system x20 (16x16)", name, best_of(run, repeat, 20) / 20))
    return rows


def legalize_median(count=100):
    lib = toy_library(count, seed=4)
    times = []
    for i, pat in enumerate(lib):
        t0 = timeit.default_timer()
        legalize.legalize_pattern(pat.topology, TOY_RULES, "R", make_rng(i))
        times.append(timeit.default_timer() - t0)
    return float(np.median(times))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--legalize-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.legalize_only:
        print(json.dumps({"backend": kernels.BACKEND_NAME, "median_s": legalize_median()}))
        return
    print(f"{'kernel':30s} {'backend':9s} {'time':>12s}")
    table = kernel_table(args.repeat)
    for kernel, backend, t in table:
        print(f"{kernel:30s} {backend:9s} {t * 1e6:10.1f} us")
    by = {}
    for kernel, backend, t in table:
        by.setdefault(kernel, {})[backend] = t
    for kernel, d in by.items():
        if "compiled" in d:
            print(f"speedup {kernel}: {d['python'] / d['compiled']:.1f}x")
    for env in ({}, {"PATGEN_PURE_PYTHON": "1"}):
        out = subprocess.run(
            [sys.executable, __file__, "--legalize-only"], env={**os.environ, **env},
            capture_output=True, text=True, check=True,
        )
        doc = json.loads(out.stdout)
        print(f"legalize_pattern median ({doc['backend']}): {doc['median_s'] * 1e3:.3f} ms")


if __name__ == "__main__":
    main()
