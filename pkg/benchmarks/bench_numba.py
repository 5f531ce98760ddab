#!/usr/bin/env python3
"""Numba vs numpy kernels: per-kernel timings and full solves.

Numba functions are called once before timing so compilation is excluded.
Run with ``python benchmarks/bench_numba.py [--repeat N] [--json out.json]``.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from dcgpsr import channel as ch
from dcgpsr import kernels, solvers


def kernel_cases(n, rng):
    z = np.abs(rng.standard_normal(2 * n))
    g = rng.standard_normal(n)
    grad = rng.standard_normal(2 * n)
    mask = kernels.NUMPY_KERNELS.topk_mask(z, n // 8)
    out = np.empty(2 * n)
    k = n // 8
    return {
        "topk_mask": lambda K: K.topk_mask(z, k),
        "topk_sum": lambda K: K.topk_sum(z, k),
        "dc_gradient": lambda K: K.dc_gradient(g, mask, 0.1, out),
        "project_step": lambda K: K.project_step(z, grad, 0.5, out),
        "soft_threshold": lambda K: K.soft_threshold(g, 0.3),
        "fold": lambda K: K.fold(z),
    }


def time_call(fn, repeat):
    fn()
    number = max(1, int(0.02 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_kernels(sizes, repeat):
    rows = []
    rng = np.random.default_rng(0)
    for n in sizes:
        for name, call in kernel_cases(n, rng).items():
            t_np = time_call(lambda: call(kernels.NUMPY_KERNELS), repeat)
            t_nb = time_call(lambda: call(kernels.NUMBA_KERNELS), repeat)
            rows.append({"kernel": name, "n": n, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb})
    return rows


def desk_problem(seed, snr_db):
    params = ch.ChannelParams(256, 1, 3, 16)
    channel = ch.generate_channel(params, seed=seed)
    setup = ch.make_measurement_matrix("gaussian", 128, 256, seed=seed)
    obs = ch.observe(setup, channel, snr_db)
    p = ch.columnize(obs.r, setup.s_matrix, channel, obs.noise_variance)[0]
    rho = 1e-3 * float(np.max(np.abs(p.phi.T @ p.y)))
    return ch.SparseProblem(p.phi, p.y, p.k_budget, rho, p.noise_variance, p.x_true)


def bench_solves(algorithms, seeds, repeat):
    problems = [desk_problem(s, np.inf) for s in seeds]
    ops = [solvers.SplitOperator.from_problem(p) for p in problems]
    rows = []
    for alg in algorithms:
        result = {}
        for backend in ("numpy", "numba"):
            kernels.use_backend(backend)
            solvers.solve(problems[0], alg, op=ops[0])

            def run():
                for p, op in zip(problems, ops):
                    solvers.solve(p, alg, op=op)

            result[backend] = min(timeit.repeat(run, number=1, repeat=repeat)) / len(problems)
        rows.append({"algorithm": alg, "numpy_s": result["numpy"], "numba_s": result["numba"],
                     "speedup": result["numpy"] / result["numba"]})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", default="64,512,4096,65536")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)
    if kernels.NUMBA_KERNELS is None:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    previous = kernels.BACKEND
    sizes = [int(s) for s in args.sizes.split(",")]
    krows = bench_kernels(sizes, args.repeat)
    srows = bench_solves(["sldc_bb", "dldc", "l1_gpsr", "ista"], range(args.seeds), max(1, args.repeat // 2))
    kernels.use_backend(previous)

    print(f"{'kernel':<15}{'n':>8}{'numpy us':>12}{'numba us':>12}{'speedup':>9}")
    for r in krows:
        print(f"{r['kernel']:<15}{r['n']:>8}{r['numpy_s'] * 1e6:>12.2f}{r['numba_s'] * 1e6:>12.2f}{r['speedup']:>9.2f}")
    print()
    print(f"{'solve (N_t=256, L=128)':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for r in srows:
        print(f"{r['algorithm']:<24}{r['numpy_s'] * 1e3:>10.2f}{r['numba_s'] * 1e3:>10.2f}{r['speedup']:>9.2f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"kernels": krows, "solves": srows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
