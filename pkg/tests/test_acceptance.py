"""Acceptance criteria, one summary line each (see the terminal summary).

The heavy Monte-Carlo runs are shared through module-scoped fixtures. Every
criterion is asserted after its line is reported, so a red criterion shows up
both as a FAIL line and as a failed test.
"""
import math
import time

import numpy as np
import pytest

from dcgpsr import bench
from dcgpsr import channel as ch
from dcgpsr import regularizer as reg
from dcgpsr import solvers as S
from oracles import dc_global_min, topk_norm_bruteforce

pytestmark = pytest.mark.acceptance

EXACT = 1e-20
TRIALS = 100


def cells_by(table):
    return {(c["algorithm"], c["L"], c["snr_db"]): c for c in bench.summarize(table)["cells"]}


@pytest.fixture(scope="module")
def noiseless_run():
    cfg = bench.config_from_dict({"scenario": "reconstruction_demo", "trials": TRIALS})
    t0 = time.perf_counter()
    table = bench.run_trials(cfg)
    elapsed = time.perf_counter() - t0
    return cfg, table, elapsed


@pytest.fixture(scope="module")
def noisy_run():
    cfg = bench.config_from_dict({"scenario": "nmse_vs_snr", "snr_db_list": [18, 30, 40], "trials": TRIALS})
    return cfg, bench.run_trials(cfg)


@pytest.fixture(scope="module")
def rate_run():
    cfg = bench.config_from_dict({"scenario": "rate_vs_pilot_len", "trials": TRIALS,
                                  "algorithms": ["dldc", "sldc_bb", "l1_gpsr"]})
    return cfg, bench.run_trials(cfg)


# -- 1 -------------------------------------------------------------------------


def test_criterion_1_noiseless_exact_recovery(noiseless_run, report):
    cfg, table, elapsed = noiseless_run
    cells = cells_by(table)
    frac = {a: cells[(a, 128, "inf")]["exact_fraction"] for a in ("dldc", "sldc_bb")}
    l1_median = cells[("l1_gpsr", 128, "inf")]["error_median"]
    ok = all(f >= 0.95 for f in frac.values()) and l1_median >= 1e-3 and elapsed < 300
    report("criterion 1 (noiseless exact recovery)", ok,
           f"exact<=1e-20: dldc {frac['dldc']:.0%}, sldc_bb {frac['sldc_bb']:.0%} (need >=95%); "
           f"l1_gpsr median error {l1_median:.2e} (need >=1e-3); {elapsed:.0f}s for {TRIALS} trials (need <300s)")
    assert ok


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_objective_gap(noiseless_run, report):
    # terminal objectives need the iterates, so the same trials are solved again here
    cfg = noiseless_run[0]
    within = {"dldc": 0, "sldc_bb": 0}
    l1_excess = []
    for trial in range(cfg.trials):
        _, _, _, _, problems = bench.build_trial(cfg, trial, 128, math.inf)
        p = problems[0]
        target = p.rho * float(np.sum(np.abs(p.x_true)))
        op = S.SplitOperator.from_problem(p)
        for alg in within:
            x = S.solve(p, alg, cfg.solver, op=op).x_hat
            if abs(S.lasso_objective(x, p.phi, p.y, p.rho) - target) <= 1e-6 * target:
                within[alg] += 1
        x = S.solve(p, "l1_gpsr", cfg.solver, op=op).x_hat
        l1_excess.append(S.lasso_objective(x, p.phi, p.y, p.rho) / target - 1.0)
    med = float(np.median(l1_excess))
    frac = {a: n / cfg.trials for a, n in within.items()}
    ok = all(f >= 0.95 for f in frac.values()) and med >= 0.10
    report("criterion 2 (objective gap)", ok,
           f"DC l1-form within 1e-6 of rho*||x_opt||_1: dldc {frac['dldc']:.0%}, sldc_bb {frac['sldc_bb']:.0%} "
           f"(need >=95%); l1_gpsr median relative excess {med:+.3e} (need >=+0.10)")
    assert ok


# -- 3 -------------------------------------------------------------------------


def test_criterion_3_accuracy_ordering(noisy_run, report):
    _, table = noisy_run
    cells = cells_by(table)
    snrs = [18.0, 30.0, 40.0]
    nm = {(a, s): cells[(a, 128, s)]["nmse_mean"] for a in ("dldc", "sldc_bb", "l1_gpsr", "ista", "omp")
          for s in snrs}
    dc_below = all(nm[(a, s)] < nm[("l1_gpsr", s)] for a in ("dldc", "sldc_bb") for s in snrs)
    l1_below = all(nm[("l1_gpsr", s)] < nm[(b, s)] for b in ("ista", "omp") for s in snrs)
    within3 = all(max(nm[("ista", s)], nm[("omp", s)]) <= 3 * min(nm[("ista", s)], nm[("omp", s)]) for s in snrs)
    mono = all(nm[(a, s1)] >= nm[(a, s2)] for a in ("dldc", "sldc_bb") for s1, s2 in zip(snrs, snrs[1:]))
    ok = dc_below and l1_below and within3 and mono
    table_txt = "; ".join(
        f"{int(s)}dB " + " ".join(f"{a}={nm[(a, s)]:.2e}" for a in ("dldc", "sldc_bb", "l1_gpsr", "ista", "omp"))
        for s in snrs)
    report("criterion 3 (accuracy ordering)", ok,
           f"DC<l1 {dc_below}, l1<{{ista,omp}} {l1_below}, ista/omp within 3x {within3}, "
           f"DC monotone in SNR {mono} | mean NMSE {table_txt}")
    assert ok


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_runtime_ratio(noisy_run, report):
    _, table = noisy_run
    c = cells_by(table)
    ratio = c[("sldc_bb", 128, 30.0)]["runtime_mean"] / c[("dldc", 128, 30.0)]["runtime_mean"]
    ok = ratio <= 0.5
    report("criterion 4 (runtime ratio at 30 dB)", ok,
           f"mean sldc_bb/dldc = {ratio:.3f} (need <=0.5); means "
           f"{c[('sldc_bb', 128, 30.0)]['runtime_mean'] * 1e3:.1f} ms vs {c[('dldc', 128, 30.0)]['runtime_mean'] * 1e3:.1f} ms")
    assert ok


# -- 5 -------------------------------------------------------------------------


def test_criterion_5_rate_peak(rate_run, report):
    cfg, table = rate_run
    cells = cells_by(table)
    Ls = list(cfg.L_list)
    curve = {a: [cells[(a, L, 25.0)]["spectral_efficiency"] for L in Ls] for a in ("dldc", "sldc_bb", "l1_gpsr")}
    interior = {a: 0 < int(np.argmax(v)) < len(Ls) - 1 for a, v in curve.items()}
    above = {a: all(d >= l for d, l in zip(curve[a], curve["l1_gpsr"])) for a in ("dldc", "sldc_bb")}
    ok = all(interior.values()) and all(above.values())
    worst = {a: min(d - l for d, l in zip(curve[a], curve["l1_gpsr"])) for a in above}
    report("criterion 5 (spectral efficiency vs L)", ok,
           f"interior peak {interior}; DC>=l1 at every L {above} (min margin dldc {worst['dldc']:+.4f}, "
           f"sldc_bb {worst['sldc_bb']:+.4f}) | " + " ".join(
               f"L={L}:{curve['dldc'][i]:.3f}/{curve['sldc_bb'][i]:.3f}/{curve['l1_gpsr'][i]:.3f}"
               for i, L in enumerate(Ls)))
    assert ok


# -- 6 -------------------------------------------------------------------------


def _topk_bruteforce(rng):
    for _ in range(500):
        n = int(rng.integers(1, 13))
        # dyadic values keep every partial sum exact, so equality is meaningful
        x = rng.integers(-64, 65, n) / 8.0
        k = int(rng.integers(0, n + 1))
        if reg.top_k1_norm(x, k) != topk_norm_bruteforce(x, k):
            return False
    return True


def _dc_gap_iff(rng):
    for _ in range(500):
        n = int(rng.integers(1, 30))
        x = rng.standard_normal(n) * (rng.random(n) < rng.random())
        k = int(rng.integers(0, n + 1))
        if (reg.dc_gap(x, k) == 0) != (np.count_nonzero(x) <= k):
            return False
    return True


def _lipschitz_split_psd(rng):
    for _ in range(100):
        m, n = rng.integers(1, 40, 2)
        phi = rng.standard_normal((m, n)) * rng.uniform(0.01, 10)
        lip = reg.lipschitz_constant(phi)
        if np.linalg.eigvalsh(lip * np.eye(n) - phi.T @ phi).min() < -1e-8 * lip:
            return False
    return True


def _certified_penalty_sparsity(rng):
    for _ in range(20):
        n = int(rng.integers(4, 11))
        m = int(rng.integers(n, n + 6))
        k = int(rng.integers(1, 4))
        phi = rng.standard_normal((m, n))
        y = rng.standard_normal(m)
        rho = reg.penalty_threshold(phi, y, reg.default_q(phi, y)).rho_star
        x, _ = dc_global_min(phi, y, rho, k)
        if reg.dc_gap(x, k) != 0:
            return False
    return True


def _single_loop_identity(rng):
    one = S.SolverConfig(max_outer=1)
    for _ in range(100):
        m, n = rng.integers(2, 20, 2)
        p = ch.SparseProblem(rng.standard_normal((m, n)), rng.standard_normal(m), int(rng.integers(0, n + 1)),
                             float(rng.uniform(0.01, 2)))
        op = S.SplitOperator.from_problem(p)
        z0 = np.abs(rng.standard_normal(2 * n)) * (rng.random(2 * n) < 0.7)
        step = S.gradient_projection_step(z0, S.dc_gradient(op, z0, p.rho, p.k_budget), 1.0 / op.lipschitz)
        if not np.array_equal(S.sldc_basic(p, one, op=op, z0=z0).z_final, step):
            return False
    return True


def _finite_differences(rng):
    h = 1e-6
    worst = 0.0
    for _ in range(50):
        m, n = rng.integers(2, 16, 2)
        phi, y = rng.standard_normal((m, n)), rng.standard_normal(m)
        k, rho = int(rng.integers(0, n + 1)), float(rng.uniform(0.05, 2))
        op = S.SplitOperator(phi, y)
        z = np.abs(rng.standard_normal(2 * n)) + 0.05
        mask = reg.indicator_topk_nonneg(z, k)

        def f(w):
            r = phi @ (w[:n] - w[n:]) - y
            return 0.5 * r @ r + rho * np.sum((1 - mask) * w)

        g = S.dc_gradient(op, z, rho, k)
        idx = np.flatnonzero(z > 10 * h)
        fd = np.array([(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(2 * n)[idx]])
        worst = max(worst, np.linalg.norm(fd - g[idx]) / np.linalg.norm(g[idx]))
    return worst <= 1e-6, worst


def _monotone(rng):
    for seed in range(20):
        p = ch.planted_problem(int(rng.integers(10, 30)), 32, 4, seed=seed)
        p = ch.SparseProblem(p.phi, p.y, p.k_budget, float(rng.choice([1e-1, 1e-2, 1e-3]))
                             * float(np.max(np.abs(p.phi.T @ p.y))), 0.0, p.x_true)
        d = [r.objective for r in S.solve(p, "dldc").trace if r.marker]
        b = [r.objective for r in S.solve(p, "sldc_bb").trace]
        for seq in (d, b):
            if any(v2 > v1 + 1e-12 for v1, v2 in zip(seq, seq[1:])):
                return False
    return True


def _determinism(tmp_path):
    cfg = bench.config_from_dict({
        "scenario": "nmse_vs_snr", "trials": 2, "snr_db_list": [20, "inf"],
        "channel": {"n_tx": 32, "n_rx": 2, "n_paths": 2, "n_sparse": 4}, "measurement": {"L": [24]},
    })
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        bench.run_experiment(cfg.replace(output_dir=str(out)))
        blobs.append((out / "results.csv").read_bytes())
    return blobs[0] == blobs[1]


def test_criterion_6_property_suites(report, tmp_path):
    rng = np.random.default_rng(20240606)
    t0 = time.perf_counter()
    fd_ok, fd_worst = _finite_differences(rng)
    parts = {
        "top-(K,1) vs brute force (500)": _topk_bruteforce(rng),
        "dc_gap=0 iff ||x||_0<=K (500)": _dc_gap_iff(rng),
        "l*I - Phi^T Phi PSD within 1e-8 l (100)": _lipschitz_split_psd(rng),
        "rho>=rho* global minimiser is K-sparse (20)": _certified_penalty_sparsity(rng),
        "sldc_basic step == projection step (100)": _single_loop_identity(rng),
        f"gradient vs finite differences (50, worst {fd_worst:.1e})": fd_ok,
        "monotone dldc outer / sldc_bb steps": _monotone(rng),
        "byte-identical results.csv": _determinism(tmp_path),
    }
    elapsed = time.perf_counter() - t0
    ok = all(parts.values()) and elapsed < 60
    report("criterion 6 (property suites)", ok,
           "; ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in parts.items()) + f"; {elapsed:.1f}s (need <60s)")
    assert ok
