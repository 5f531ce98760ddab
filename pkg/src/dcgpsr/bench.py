"""Configuration-driven experiment runner.

A run is a pure function of its configuration: trial ``t`` uses seed
``base_seed + t`` for the channel, the measurement matrix and the noise, and
every selected algorithm sees the identical problem.

Outputs written to ``output_dir``:

``results.csv``
    one row per (trial, algorithm, L, snr); deterministic, byte-identical
    across reruns with the same configuration.
``runtimes.csv``
    wall-clock seconds per row, plus an ISO-8601 timestamp comment.
``failures.csv``
    rows whose solve raised a numerical failure (omitted from results).
``summary.json``
    per (algorithm, L, snr) aggregates, including mean NMSE, the spectral
    efficiency it implies, mean/median runtime and runtime ratios.
"""
import csv
import dataclasses
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import metrics
from . import regularizer
from . import solvers
from .envelope import atomic_write_text

log = logging.getLogger(__name__)

SCENARIOS = ("reconstruction_demo", "nmse_vs_snr", "rate_vs_pilot_len", "runtime_table", "convergence_trace")
BENCH_ALGORITHMS = solvers.ALGORITHMS + ("ls",)
PENALTY_MODES = ("auto", "relative", "absolute", "universal", "threshold")

RESULT_COLUMNS = (
    "scenario", "algorithm", "L", "snr_db", "trial", "seed", "nmse", "error_l2_normalized",
    "spectral_efficiency", "outer_iters", "inner_iters", "termination", "rho",
)
TRACE_COLUMNS = ("iter", "outer", "outer_marker", "objective_dc_form", "objective_l1_form", "error_vs_truth")

_MAIN_ALGS = ["dldc", "sldc_bb", "l1_gpsr", "ista", "omp"]
SCENARIO_DEFAULTS = {
    "reconstruction_demo": {"snr_db_list": [math.inf], "L": [128], "algorithms": ["dldc", "sldc_bb", "l1_gpsr"]},
    "nmse_vs_snr": {"snr_db_list": [10.0, 18.0, 25.0, 30.0, 40.0], "L": [128], "algorithms": _MAIN_ALGS},
    "rate_vs_pilot_len": {
        "snr_db_list": [25.0], "L": [32, 64, 96, 128, 160, 192, 224, 256], "algorithms": _MAIN_ALGS,
    },
    "runtime_table": {"snr_db_list": [30.0], "L": [128], "algorithms": _MAIN_ALGS},
    "convergence_trace": {"snr_db_list": [math.inf], "L": [128], "algorithms": ["dldc", "sldc_bb", "l1_gpsr"]},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``line`` points into the source text when known."""

    def __init__(self, message, source=None, line=None):
        self.source, self.line = source, line
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# penalty selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyPolicy:
    """How ``rho`` is chosen for each generated problem.

    ``relative``: ``relative * ||phi^T y||_inf``.
    ``absolute``: ``value``.
    ``universal``: ``scale * sigma * sqrt(2 ln n) * max_j ||phi_j||`` with
    ``sigma`` the per-real-component noise standard deviation.
    ``threshold``: the sparsity-certifying level of
    :func:`regularizer.penalty_threshold` with bound ``q`` (or the default bound).
    ``auto``: ``universal`` for noisy problems, ``relative`` for noiseless ones.
    """

    mode: str = "auto"
    relative: float = 1e-3
    scale: float = 1.0
    value: float = None
    q: float = None

    def __post_init__(self):
        if self.mode not in PENALTY_MODES:
            raise ValueError(f"unknown penalty mode {self.mode!r}; valid: {', '.join(PENALTY_MODES)}")
        if not self.relative > 0 or not self.scale > 0:
            raise ValueError("penalty relative and scale must be positive")
        if self.mode == "absolute" and not (self.value is not None and self.value > 0):
            raise ValueError("absolute penalty needs a positive 'value'")
        if self.q is not None and not self.q > 0:
            raise ValueError("penalty q must be positive")

    def rho_for(self, phi, y, noise_variance):
        mode = self.mode
        if mode == "auto":
            mode = "universal" if noise_variance > 0 else "relative"
        if mode == "absolute":
            return float(self.value)
        if mode == "threshold":
            q = self.q if self.q is not None else regularizer.default_q(phi, y)
            return regularizer.penalty_threshold(phi, y, q).rho_star
        if mode == "universal":
            if not noise_variance > 0:
                raise ValueError("universal penalty needs a noisy problem")
            sigma = math.sqrt(noise_variance / 2.0)
            colmax = float(np.max(np.linalg.norm(phi, axis=0)))
            return self.scale * sigma * math.sqrt(2.0 * math.log(phi.shape[1])) * colmax
        rho = self.relative * float(np.max(np.abs(phi.T @ y)))
        if not rho > 0:
            raise ValueError("phi^T y vanishes; relative penalty undefined")
        return rho


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    channel: ch.ChannelParams = field(default_factory=ch.ChannelParams)
    measurement_kind: str = "gaussian"
    L_list: tuple = (128,)
    power_budget: float = None
    snr_db_list: tuple = (math.inf,)
    algorithms: tuple = ("dldc", "sldc_bb", "l1_gpsr")
    trials: int = 100
    base_seed: int = 0
    solver: solvers.SolverConfig = field(default_factory=solvers.SolverConfig)
    penalty: PenaltyPolicy = field(default_factory=PenaltyPolicy)
    k_budget: int = None
    coherence_len: int = 600
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; valid: {', '.join(SCENARIOS)}")
        if self.measurement_kind not in ch.MEASUREMENT_KINDS:
            raise ValueError(
                f"unknown measurement kind {self.measurement_kind!r}; valid: {', '.join(ch.MEASUREMENT_KINDS)}"
            )
        if not self.algorithms:
            raise ValueError("algorithm set must not be empty")
        bad = [a for a in self.algorithms if a not in BENCH_ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithm {bad[0]!r}; valid: {', '.join(BENCH_ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ValueError("algorithms must not repeat")
        if _not_int(self.trials) or self.trials < 1:
            raise ValueError(f"trials must be an integer >= 1, got {self.trials!r}")
        if _not_int(self.base_seed) or not 0 <= self.base_seed < 2**63:
            raise ValueError("base_seed must be a nonnegative 64-bit integer")
        if not self.L_list or any(_not_int(L) or L < 1 for L in self.L_list):
            raise ValueError("L must be a non-empty list of positive integers")
        if not self.snr_db_list or any(math.isnan(s) or s == -math.inf for s in self.snr_db_list):
            raise ValueError("snr_db_list must be a non-empty list of numbers or 'inf'")
        if _not_int(self.coherence_len) or self.coherence_len < max(self.L_list):
            raise ValueError("coherence_len must be an integer no smaller than every L")
        if _not_int(self.workers) or self.workers < 1:
            raise ValueError("workers must be a positive integer")
        if self.k_budget is not None and (_not_int(self.k_budget) or self.k_budget < 0):
            raise ValueError("k_budget must be a nonnegative integer")
        if self.solver.rho is not None:
            raise ValueError("set the penalty through 'penalty', not solver.rho")

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "channel": dataclasses.asdict(self.channel),
            "measurement": {"kind": self.measurement_kind, "L": list(self.L_list), "power_budget": self.power_budget},
            "snr_db_list": [_snr_json(s) for s in self.snr_db_list],
            "algorithms": list(self.algorithms),
            "trials": self.trials,
            "base_seed": self.base_seed,
            "solver": {k: v for k, v in self.solver.to_dict().items() if k != "rho"},
            "penalty": dataclasses.asdict(self.penalty),
            "k_budget": self.k_budget,
            "coherence_len": self.coherence_len,
            "workers": self.workers,
            "output_dir": self.output_dir,
        }

    def digest(self):
        """Hash of everything that influences results (not workers or output_dir)."""
        d = self.to_dict()
        d.pop("workers")
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _not_int(v):
    return isinstance(v, bool) or not isinstance(v, (int, np.integer))


def _snr_json(s):
    return "inf" if s == math.inf else s


def _parse_snr(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity", "noiseless"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"SNR entries must be numbers or 'inf', got {v!r}")
    return float(v)


_TOP_KEYS = {
    "scenario", "channel", "measurement", "snr_db_list", "algorithms", "trials", "base_seed",
    "solver", "penalty", "k_budget", "coherence_len", "workers", "output_dir",
}


def _key_line(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


# message fragment -> config key whose line is reported
_ERROR_KEYS = (
    ("algorithm", "algorithms"), ("trials", "trials"), ("base_seed", "base_seed"),
    ("snr_db_list", "snr_db_list"), ("coherence_len", "coherence_len"), ("workers", "workers"),
    ("k_budget", "k_budget"), ("L must", "measurement"), ("measurement kind", "measurement"),
)


def config_from_dict(d, text=None, source=None):
    """Build an :class:`ExperimentConfig`; unknown keys are rejected.

    ``text`` and ``source`` let errors point at the offending line.
    """

    def fail(msg, key=None):
        raise ConfigError(msg, source, _key_line(text, key) if key else None)

    if not isinstance(d, dict):
        fail("configuration must be a JSON object")
    for key in d:
        if key not in _TOP_KEYS:
            fail(f"unknown key {key!r}; valid keys: {', '.join(sorted(_TOP_KEYS))}", key)
    if "scenario" not in d:
        fail("missing required key 'scenario'")
    scenario = d["scenario"]
    if scenario not in SCENARIOS:
        fail(f"unknown scenario {scenario!r}; valid: {', '.join(SCENARIOS)}", "scenario")
    preset = SCENARIO_DEFAULTS[scenario]
    kw = {"scenario": scenario}

    def section(name, allowed):
        sec = d.get(name, {})
        if not isinstance(sec, dict):
            fail(f"{name!r} must be an object", name)
        for key in sec:
            if key not in allowed:
                fail(f"unknown key {name}.{key}; valid: {', '.join(sorted(allowed))}", key)
        return sec

    chan = section("channel", {f.name for f in dataclasses.fields(ch.ChannelParams)})
    try:
        kw["channel"] = ch.ChannelParams(**chan)
    except (TypeError, ValueError) as exc:
        fail(str(exc), "channel")
    meas = section("measurement", {"kind", "L", "power_budget"})
    kw["measurement_kind"] = meas.get("kind", "gaussian")
    L = meas.get("L", preset["L"])
    kw["L_list"] = tuple(L) if isinstance(L, list) else (L,)
    kw["power_budget"] = meas.get("power_budget")
    try:
        snr = d.get("snr_db_list", preset["snr_db_list"])
        kw["snr_db_list"] = tuple(_parse_snr(s) for s in (snr if isinstance(snr, list) else [snr]))
    except ValueError as exc:
        fail(str(exc), "snr_db_list")
    algs = d.get("algorithms", preset["algorithms"])
    if not isinstance(algs, list):
        fail("'algorithms' must be a list", "algorithms")
    kw["algorithms"] = tuple(algs)
    solver_keys = {f.name for f in dataclasses.fields(solvers.SolverConfig)} - {"rho", "k_budget"}
    solver_sec = section("solver", solver_keys)
    try:
        kw["solver"] = solvers.SolverConfig(**solver_sec)
    except (TypeError, ValueError) as exc:
        fail(str(exc), "solver")
    pen = section("penalty", {f.name for f in dataclasses.fields(PenaltyPolicy)})
    try:
        kw["penalty"] = PenaltyPolicy(**pen)
    except (TypeError, ValueError) as exc:
        fail(str(exc), "penalty")
    for key in ("trials", "base_seed", "k_budget", "coherence_len", "workers", "output_dir"):
        if key in d:
            kw[key] = d[key]
    try:
        return ExperimentConfig(**kw)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        key = next((k for frag, k in _ERROR_KEYS if frag in msg), None)
        fail(msg, key)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", path, exc.lineno) from None
    return config_from_dict(d, text=text, source=path)


# ---------------------------------------------------------------------------
# running trials
# ---------------------------------------------------------------------------


@dataclass
class ResultTable:
    rows: list
    runtimes: list
    failures: list
    config: ExperimentConfig

    def csv_text(self):
        buf = io.StringIO()
        buf.write(f"# dcgpsr results scenario={self.config.scenario} base_seed={self.config.base_seed} "
                  f"config={self.config.digest()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def build_trial(config, trial, L, snr_db):
    """Channel, measurement setup, observation and problems for one trial."""
    seed = config.base_seed + trial
    channel = ch.generate_channel(config.channel, seed=seed)
    setup = ch.make_measurement_matrix(config.measurement_kind, L, config.channel.n_tx,
                                       config.power_budget, seed=seed)
    obs = ch.observe(setup, channel, snr_db, seed=seed)
    problems = ch.columnize(obs.r, setup.s_matrix, channel, obs.noise_variance, config.k_budget, 1.0)
    problems = [
        dataclasses.replace(p, rho=config.penalty.rho_for(p.phi, p.y, p.noise_variance)) for p in problems
    ]
    return seed, channel, setup, obs, problems


def _solve_column(problem, algorithm, solver_cfg, callback=None):
    return solvers.solve(problem, algorithm, solver_cfg, callback=callback)


def _run_unit(config, trial, L, snr_db):
    seed, channel, setup, obs, problems = build_trial(config, trial, L, snr_db)
    truth = channel.truth
    snr_lin = metrics.db_to_linear(snr_db)
    out, times, fails = [], [], []
    for alg in config.algorithms:
        base = {"scenario": config.scenario, "algorithm": alg, "L": L, "snr_db": snr_db, "trial": trial, "seed": seed}
        try:
            if alg == "ls":
                t0 = time.perf_counter()
                est = solvers.ls_estimate(obs.r, setup.s_matrix)
                elapsed = time.perf_counter() - t0
                outer = inner = 0
                term = "closed_form"
                rho = float("nan")
            else:
                cols, elapsed, outer, inner, terms = [], 0.0, 0, 0, []
                for p in problems:
                    t0 = time.perf_counter()
                    res = _solve_column(p, alg, config.solver)
                    elapsed += time.perf_counter() - t0
                    cols.append(ch.complexify(res.x_hat))
                    outer += res.outer_iters
                    inner += res.inner_iters_total
                    terms.append(res.termination)
                est = np.stack(cols, axis=1)
                term = "tolerance" if all(t == "tolerance" for t in terms) else "max_iters"
                rho = float(problems[0].rho)
        except (solvers.NumericalFailure, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("trial %d %s L=%d snr=%s failed: %s", trial, alg, L, snr_db, exc)
            fails.append({**base, "error": f"{type(exc).__name__}: {exc}"})
            continue
        e = metrics.nmse([truth], [est])
        x_true = np.concatenate([p.x_true for p in problems])
        x_hat = np.concatenate([ch.realify(est[:, i]) for i in range(est.shape[1])])
        err = float(np.sum((x_hat - x_true) ** 2) / np.sum(x_true**2))
        se = metrics.spectral_efficiency(L, config.coherence_len, snr_lin, e)
        out.append({**base, "nmse": e, "error_l2_normalized": err, "spectral_efficiency": se,
                    "outer_iters": outer, "inner_iters": inner, "termination": term, "rho": rho})
        times.append({**base, "runtime_seconds": elapsed})
    return out, times, fails


def _unit_args(config):
    return [(config, t, L, s) for t in range(config.trials) for L in config.L_list for s in config.snr_db_list]


def _run_unit_star(args):
    return _run_unit(*args)


def _sort_key(row, order):
    return (row["trial"], order[row["algorithm"]], row["L"], row["snr_db"])


def run_trials(config):
    """Run every (trial, L, snr, algorithm) cell and return the sorted table (no I/O)."""
    units = _unit_args(config)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            parts = list(ex.map(_run_unit_star, units))
    else:
        parts = [_run_unit(*u) for u in units]
    order = {a: i for i, a in enumerate(config.algorithms)}
    rows = sorted((r for p in parts for r in p[0]), key=lambda r: _sort_key(r, order))
    times = sorted((r for p in parts for r in p[1]), key=lambda r: _sort_key(r, order))
    fails = sorted((r for p in parts for r in p[2]), key=lambda r: _sort_key(r, order))
    return ResultTable(rows, times, fails, config)


def summarize(table):
    """Aggregate rows per (algorithm, L, snr)."""
    cfg = table.config
    groups = {}
    for row, t in zip(table.rows, table.runtimes):
        groups.setdefault((row["algorithm"], row["L"], row["snr_db"]), []).append((row, t["runtime_seconds"]))
    cells = []
    for (alg, L, snr), items in groups.items():
        nm = np.array([r["nmse"] for r, _ in items])
        err = np.array([r["error_l2_normalized"] for r, _ in items])
        rt = np.array([t for _, t in items])
        mean_nmse = float(np.mean(nm))
        cells.append({
            "algorithm": alg, "L": L, "snr_db": _snr_json(snr), "count": len(items),
            "nmse_mean": mean_nmse, "nmse_median": float(np.median(nm)),
            "error_median": float(np.median(err)),
            "exact_fraction": float(np.mean(err <= 1e-20)),
            "spectral_efficiency": metrics.spectral_efficiency(L, cfg.coherence_len,
                                                               metrics.db_to_linear(snr), mean_nmse),
            "runtime_mean": float(np.mean(rt)), "runtime_median": float(np.median(rt)),
        })
    ratios = {}
    means = {(c["algorithm"], c["L"], c["snr_db"]): c["runtime_mean"] for c in cells}
    for (alg, L, snr), m in means.items():
        if alg == "sldc_bb" and ("dldc", L, snr) in means and means[("dldc", L, snr)] > 0:
            ratios[f"sldc_bb/dldc L={L} snr={snr}"] = m / means[("dldc", L, snr)]
    return {"scenario": cfg.scenario, "config": cfg.to_dict(), "cells": cells,
            "runtime_ratio_sldc_bb_over_dldc": ratios, "failures": len(table.failures)}


def write_outputs(table, out_dir=None):
    out_dir = out_dir or table.config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        path = os.path.join(out_dir, "results.csv")
        atomic_write_text(path, table.csv_text())
        written.append(path)

        buf = io.StringIO()
        buf.write(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\n")
        w = csv.writer(buf, lineterminator="\n")
        cols = ("algorithm", "L", "snr_db", "trial", "seed", "runtime_seconds")
        w.writerow(cols)
        for r in table.runtimes:
            w.writerow([_fmt(r[c]) for c in cols])
        path = os.path.join(out_dir, "runtimes.csv")
        atomic_write_text(path, buf.getvalue())
        written.append(path)

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ("algorithm", "L", "snr_db", "trial", "seed", "error")
        w.writerow(cols)
        for r in table.failures:
            w.writerow([_fmt(r[c]) for c in cols])
        path = os.path.join(out_dir, "failures.csv")
        atomic_write_text(path, buf.getvalue())
        written.append(path)

        path = os.path.join(out_dir, "summary.json")
        atomic_write_text(path, json.dumps(summarize(table), indent=1, sort_keys=True) + "\n")
        written.append(path)
    except OSError:
        for p in written:
            if os.path.exists(p):
                os.unlink(p)
        raise
    return written


def run_experiment(config, write=True):
    """Run the configured scenario; write outputs unless ``write`` is false."""
    if config.scenario == "convergence_trace":
        emit_convergence_trace(config, write=write)
    table = run_trials(config)
    if write:
        write_outputs(table)
    return table


# ---------------------------------------------------------------------------
# convergence traces
# ---------------------------------------------------------------------------


def convergence_trace(problem, algorithm, solver_cfg=None):
    """Per-record rows of both objective forms and the error against the truth."""
    rho, k = problem.rho, problem.k_budget
    phi, y, x_true = problem.phi, problem.y, problem.x_true
    energy = float(x_true @ x_true) if x_true is not None else None
    rows = []

    def cb(rec, x):
        r = y - phi @ x
        fit = 0.5 * float(r @ r)
        rows.append({
            "iter": rec.iter,
            "outer": rec.outer,
            "outer_marker": int(rec.marker),
            "objective_dc_form": fit + rho * regularizer.dc_gap(x, k),
            "objective_l1_form": fit + rho * float(np.sum(np.abs(x))),
            "error_vs_truth": float(np.sum((x - x_true) ** 2)) / energy if energy else math.nan,
        })

    result = solvers.solve(problem, algorithm, solver_cfg, callback=cb)
    return rows, result


def emit_convergence_trace(config, write=True):
    """Trace every configured algorithm on trial 0 at the first L and SNR.

    Writes ``trace_<algorithm>.csv`` per algorithm and returns
    ``{algorithm: (rows, result, problem)}``. For ``dldc`` the rows contain
    both the inner iterations and the outer-step markers (``outer_marker=1``).
    """
    if config.scenario != "convergence_trace":
        raise ValueError("emit_convergence_trace needs scenario 'convergence_trace'")
    _, _, _, _, problems = build_trial(config, 0, config.L_list[0], config.snr_db_list[0])
    problem = problems[0]
    out = {}
    for alg in config.algorithms:
        if alg == "ls":
            continue
        rows, result = convergence_trace(problem, alg, config.solver)
        out[alg] = (rows, result, problem)
        if write:
            buf = io.StringIO()
            buf.write(f"# rho={problem.rho!r} k={problem.k_budget} "
                      f"l1_form_at_truth={problem.rho * float(np.sum(np.abs(problem.x_true)))!r}\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in rows:
                w.writerow([_fmt(r[c]) for c in TRACE_COLUMNS])
            atomic_write_text(os.path.join(config.output_dir, f"trace_{alg}.csv"), buf.getvalue())
    return out
