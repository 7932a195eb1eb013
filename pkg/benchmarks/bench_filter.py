"""Timing comparison of the filter cores (pure numpy vs compiled).

Usage: python benchmarks/bench_filter.py [T] [repeats]

The filter recursion dominates estimation runtime (each fit evaluates the
likelihood thousands of times for finite-difference gradients), so the
compiled core is what makes the Monte-Carlo study harness practical.
"""

import sys
import time

import numpy as np

from mspllar import CASE1, build_expanded_chain, initialize_filter
from mspllar._kernels import available_kernels
from mspllar.simulation import simulate_ms_pllar


def bench(T=500, repeats=200):
    sim = simulate_ms_pllar(CASE1, T, seed=1)
    chain = build_expanded_chain(CASE1.gamma)
    init = initialize_filter(CASE1)
    args = (
        sim.y.astype(float), np.zeros((T, 0)), CASE1.d, CASE1.a, CASE1.b,
        CASE1.beta, chain.gamma_star, chain.cur_state,
        init.lambda0, init.y0, init.prior, False,
    )
    kernels = available_kernels()
    results = {}
    reference = None
    for name, core in kernels.items():
        core(*args)  # warm up
        start = time.perf_counter()
        for _ in range(repeats):
            qll = core(*args)[0]
        elapsed = time.perf_counter() - start
        per_eval = elapsed / repeats
        results[name] = per_eval
        reference = qll if reference is None else reference
        print(
            f"{name:>9}: {per_eval * 1e6:9.1f} us/eval "
            f"({T / per_eval / 1e6:7.2f} M steps/s)  qll={qll:.10f}"
        )
        assert abs(qll - reference) < 1e-8 * abs(reference), "kernel mismatch"
    if len(results) == 2:
        print(f"speedup: {results['python'] / results['compiled']:.1f}x")
    else:
        print("compiled core not built; only the numpy fallback was timed")


if __name__ == "__main__":
    T = int(sys.argv[1]) if len(sys.argv) > 1 else 500
    repeats = int(sys.argv[2]) if len(sys.argv) > 2 else 200
    bench(T, repeats)
