"""Command-line entry point: ``dcgpsr generate|solve|bench|sweep``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""
import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from importlib import resources

import numpy as np

from . import bench
from . import channel as ch
from . import envelope
from . import solvers

DEMO_INPUT = "@demo"

log = logging.getLogger("dcgpsr")


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(f"{self.prog}: {message}")


def _float_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        out.append(math.inf if part.lower() in ("inf", "+inf") else float(part))
    return out


def _int_list(text):
    return [int(p) for p in text.split(",") if p.strip()]


def _str_list(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def demo_problem_path():
    return resources.files("dcgpsr").joinpath("data", "demo_problem.json")


def _load_problem(path):
    if path == DEMO_INPUT:
        with resources.as_file(demo_problem_path()) as p:
            return envelope.problem_from_envelope(envelope.load(p))
    return envelope.problem_from_envelope(envelope.load(path))


def _load_json_object(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise bench.ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", path, exc.lineno) from None
    if not isinstance(d, dict):
        raise bench.ConfigError("expected a JSON object", path, 1)
    return d, text


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args):
    params = ch.ChannelParams(args.n_tx, args.n_rx, args.n_paths, args.n_sparse)
    if args.config:
        cfg = bench.load_config(args.config)
        params = cfg.channel
    os.makedirs(args.out, exist_ok=True)
    if args.planted:
        m, n, k = args.planted
        p = ch.planted_problem(m, n, k, seed=args.seed)
        rho = bench.PenaltyPolicy(mode="relative", relative=args.relative).rho_for(p.phi, p.y, 0.0)
        p = dataclasses.replace(p, rho=rho)
        meta = {"seed": args.seed, "source": "planted", "m": m, "n": n, "k": k}
        envelope.dump(envelope.problem_to_envelope(p, meta), os.path.join(args.out, "problem.json"))
        print(os.path.join(args.out, "problem.json"))
        return 0
    channel = ch.generate_channel(params, seed=args.seed)
    setup = ch.make_measurement_matrix(args.kind, args.L, params.n_tx, seed=args.seed)
    obs = ch.observe(setup, channel, args.snr, seed=args.seed)
    problems = ch.columnize(obs.r, setup.s_matrix, channel, obs.noise_variance, None, 1.0)
    policy = bench.PenaltyPolicy(relative=args.relative)
    paths = [os.path.join(args.out, "channel.json"), os.path.join(args.out, "setup.json")]
    envelope.dump(envelope.channel_to_envelope(channel, params), paths[0])
    envelope.dump(envelope.setup_to_envelope(setup), paths[1])
    for i, p in enumerate(problems):
        p = dataclasses.replace(p, rho=policy.rho_for(p.phi, p.y, p.noise_variance))
        meta = {"seed": args.seed, "rx_column": i, "snr_db": envelope._json_float(obs.snr_db), "L": args.L}
        name = "problem.json" if len(problems) == 1 else f"problem_{i}.json"
        paths.append(os.path.join(args.out, name))
        envelope.dump(envelope.problem_to_envelope(p, meta), paths[-1])
    print("\n".join(paths))
    return 0


def cmd_solve(args):
    if args.algo not in solvers.ALGORITHMS:
        raise bench.ConfigError(f"unknown algorithm {args.algo!r}; valid: {', '.join(solvers.ALGORITHMS)}")
    problem = _load_problem(args.input)
    overrides = {}
    if args.config:
        d, text = _load_json_object(args.config)
        try:
            cfg = solvers.SolverConfig.from_dict(d)
        except (TypeError, ValueError) as exc:
            bad = next((k for k in d if k not in {f.name for f in dataclasses.fields(solvers.SolverConfig)}), None)
            raise bench.ConfigError(str(exc), args.config, bench._key_line(text, bad) if bad else None) from None
    else:
        cfg = solvers.SolverConfig()
    if args.rho is not None:
        overrides["rho"] = args.rho
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    try:
        result = solvers.solve(problem, args.algo, cfg)
    except solvers.NumericalFailure as exc:
        if args.out and exc.trace:
            os.makedirs(args.out, exist_ok=True)
            partial = solvers.SolverResult(np.zeros(0), np.zeros(0), exc.trace, 0, 0, "failed", args.algo)
            solvers.write_trace_csv(partial, os.path.join(args.out, "trace.csv"))
        raise
    x = result.x_hat
    summary = {
        "algorithm": result.algorithm,
        "termination": result.termination,
        "outer_iters": result.outer_iters,
        "inner_iters": result.inner_iters_total,
        "elapsed_seconds": result.elapsed_seconds,
        "rho": cfg.rho if cfg.rho is not None else problem.rho,
        "k_budget": cfg.k_budget if cfg.k_budget is not None else problem.k_budget,
        "nnz": int(np.count_nonzero(x)),
        "objective": result.trace[-1].objective if result.trace else None,
        "flags": result.flags,
        "x_hat": envelope.encode_array(x),
    }
    if problem.x_true is not None:
        xt = problem.x_true
        summary["error_l2_normalized"] = float(np.sum((x - xt) ** 2) / np.sum(xt**2))
    os.makedirs(args.out, exist_ok=True)
    envelope.atomic_write_text(os.path.join(args.out, "result.json"), json.dumps(summary, indent=1) + "\n")
    solvers.write_trace_csv(result, os.path.join(args.out, "trace.csv"))
    print(json.dumps({k: v for k, v in summary.items() if k != "x_hat"}))
    return 0


def _apply_overrides(cfg, args):
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "out", None):
        changes["output_dir"] = args.out
    if getattr(args, "workers", None):
        changes["workers"] = args.workers
    if getattr(args, "trials", None):
        changes["trials"] = args.trials
    if getattr(args, "snr", None):
        changes["snr_db_list"] = tuple(args.snr)
    if getattr(args, "L", None):
        changes["L_list"] = tuple(args.L)
    if getattr(args, "algorithms", None):
        changes["algorithms"] = tuple(args.algorithms)
    if getattr(args, "kind", None):
        changes["measurement_kind"] = args.kind
    try:
        return cfg.replace(**changes)
    except ValueError as exc:
        raise bench.ConfigError(f"command-line override: {exc}") from None


def _report(table):
    s = bench.summarize(table)
    for c in sorted(s["cells"], key=lambda c: (str(c["snr_db"]), c["L"], c["algorithm"])):
        print(f"{c['algorithm']:>10} L={c['L']:<4} snr={c['snr_db']!s:<5} nmse_mean={c['nmse_mean']:.3e} "
              f"err_median={c['error_median']:.3e} exact={c['exact_fraction']:.2f} "
              f"se={c['spectral_efficiency']:.3f} t_mean={c['runtime_mean']:.4f}s")
    for k, v in s["runtime_ratio_sldc_bb_over_dldc"].items():
        print(f"runtime ratio {k}: {v:.3f}")
    if table.failures:
        print(f"{len(table.failures)} failed solves (see failures.csv)")


def cmd_bench(args):
    cfg = _apply_overrides(bench.load_config(args.config), args)
    table = bench.run_experiment(cfg)
    _report(table)
    return 0


def cmd_sweep(args):
    if args.config:
        cfg = bench.load_config(args.config)
        if args.scenario:
            cfg = cfg.replace(scenario=args.scenario)
    else:
        cfg = bench.config_from_dict({"scenario": args.scenario or "nmse_vs_snr"})
    cfg = _apply_overrides(cfg, args)
    table = bench.run_experiment(cfg)
    _report(table)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="dcgpsr", description="DC gradient-projection sparse channel estimation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="draw a channel, pilot setup and real-valued problem")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=".")
    g.add_argument("--config", help="experiment config whose channel parameters are used")
    g.add_argument("--n-tx", type=int, default=256)
    g.add_argument("--n-rx", type=int, default=1)
    g.add_argument("--n-paths", type=int, default=3)
    g.add_argument("--n-sparse", type=int, default=16)
    g.add_argument("--L", type=int, default=128)
    g.add_argument("--kind", default="gaussian", choices=ch.MEASUREMENT_KINDS)
    g.add_argument("--snr", type=lambda s: _float_list(s)[0], default=math.inf, help="dB, or 'inf'")
    g.add_argument("--relative", type=float, default=1e-3, help="relative penalty for noiseless problems")
    g.add_argument("--planted", type=int, nargs=3, metavar=("M", "N", "K"),
                   help="write a planted K-sparse Gaussian problem instead")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve one problem envelope")
    s.add_argument("--input", required=True, help=f"problem envelope path, or {DEMO_INPUT} for the bundled demo")
    s.add_argument("--algo", required=True)
    s.add_argument("--out", default=".")
    s.add_argument("--config", help="solver settings JSON")
    s.add_argument("--rho", type=float)
    s.add_argument("--seed", type=int, help="accepted for symmetry; solving is deterministic")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run an experiment config")
    b.add_argument("--config", required=True)
    b.add_argument("--seed", type=int, help="override base_seed")
    b.add_argument("--out", help="override output_dir")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bench)

    w = sub.add_parser("sweep", help="run a scenario with axis overrides")
    w.add_argument("--config")
    w.add_argument("--scenario", choices=bench.SCENARIOS)
    w.add_argument("--snr", type=_float_list, help="comma list of dB values, 'inf' for noiseless")
    w.add_argument("--L", type=_int_list, help="comma list of pilot lengths")
    w.add_argument("--algorithms", type=_str_list, help="comma list")
    w.add_argument("--kind", choices=ch.MEASUREMENT_KINDS)
    w.add_argument("--trials", type=int)
    w.add_argument("--seed", type=int)
    w.add_argument("--out")
    w.add_argument("--workers", type=int)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _Usage as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except solvers.NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (bench.ConfigError, envelope.EnvelopeError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
