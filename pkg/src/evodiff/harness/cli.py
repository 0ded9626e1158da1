"""``evodiff`` command line.

Exit codes: 0 success, 1 partial failure (some cells or checks failed),
2 total failure or invalid input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .. import __version__
from ..diagnostics import (convergence_order, data_vs_noise_variance, entropy_scan,
                           reconstruction_decomposition_check, step_variance_trajectory)
from ..exceptions import EvoDiffError, ParseError, ValidationError
from ..oracle import DenoiserOracle
from ..schedule import GRID_POLICIES, R_STRATEGIES, SCHEDULES, Parameterization
from ..solver import SOLVERS, initial_noise, make_solver, oracle_mode, run
from ..varopt import eta_star, grid_search_min, random_instances, zeta_star
from .config import ExperimentConfig, load_config, parse_config
from .experiment import (ENTROPY_COLUMNS, STEP_COLUMNS, build_distribution, build_grid,
                         build_schedule, csv_text, entropy_rows, run_experiment, seed_streams,
                         step_rows, write_csv)

EXIT_OK, EXIT_PARTIAL, EXIT_FAIL = 0, 1, 2
GRID_TOL = 2e-4


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _emit(text: str, out: str | None) -> None:
    if out:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("schedule, grid and oracle")
    g.add_argument("--schedule", default="vp_linear", choices=sorted(SCHEDULES))
    g.add_argument("--grid", default="logsnr", choices=GRID_POLICIES)
    g.add_argument("--rho", type=float, default=7.0)
    g.add_argument("--beta0", type=float, default=None)
    g.add_argument("--beta1", type=float, default=None)
    g.add_argument("--dist", default="gaussian", choices=("gaussian", "gmm"))
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--components", type=int, default=4)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver parameters")
    g.add_argument("--mu", type=float, default=None)
    g.add_argument("--r-strategy", default=None, choices=R_STRATEGIES)
    g.add_argument("--reuse-probe", dest="reuse_probe", action="store_true", default=None)
    g.add_argument("--no-reuse-probe", dest="reuse_probe", action="store_false")
    g.add_argument("--eta-formula", default=None, choices=("literal", "analytic"))
    g.add_argument("--zeta-formula", default=None, choices=("literal", "analytic"))
    g.add_argument("--zeta-map", default=None, choices=("plain", "scaled"))
    g.add_argument("--corrector", default=None, choices=("interpolated", "plain"))
    g.add_argument("--reduction", default=None, choices=("batch", "sample"))


def _config_text(args, solvers, steps, seeds, metrics=("sliced_wasserstein",), n_samples=1000) -> str:
    """Translate command-line flags into the TOML grammar so one validator applies."""
    import tomli_w

    sched = {"kind": args.schedule}
    if args.beta0 is not None:
        sched["beta0"] = args.beta0
    if args.beta1 is not None:
        sched["beta1"] = args.beta1
    oracle = {"dist": args.dist, "dim": args.dim}
    if args.dist == "gmm":
        oracle["components"] = args.components
    solver = {"names": list(solvers)}
    for key in ("mu", "r_strategy", "reuse_probe", "eta_formula", "zeta_formula", "zeta_map",
                "corrector", "reduction"):
        v = getattr(args, key, None)
        if v is not None:
            solver[key] = v
    experiment = {"steps": list(steps), "seeds": list(seeds), "metrics": list(metrics),
                  "n_samples": n_samples, "output": getattr(args, "out_dir", None) or "evodiff_out"}
    for key in ("workers", "n_reference"):
        v = getattr(args, key, None)
        if v is not None:
            experiment[key] = v
    return tomli_w.dumps({"solver": solver, "schedule": sched,
                          "grid": {"policy": args.grid, "rho": args.rho},
                          "oracle": oracle, "experiment": experiment})


def _config_from(args, solvers, steps, seeds, **kw) -> ExperimentConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return parse_config(_config_text(args, solvers, steps, seeds, **kw))


# ---------------------------------------------------------------- commands

def cmd_sample(args) -> int:
    cfg = _config_from(args, [args.solver], [args.steps], [args.seed], n_samples=args.n_samples)
    schedule, dist = build_schedule(cfg), build_distribution(cfg)
    kind = make_solver(cfg.solvers[0], **cfg.solver_params)
    N = cfg.steps[0]
    grid = build_grid(cfg, schedule, N)
    oracle = DenoiserOracle(dist, schedule, oracle_mode(kind))
    x_T = initial_noise(schedule, grid, (cfg.n_samples, dist.dim), seed_streams(cfg.seeds[0])[0])
    result = run(kind, oracle, grid, schedule, x_T)
    _emit(csv_text(STEP_COLUMNS, step_rows(result)), args.out)
    if args.samples_out:
        cols = [f"x{j}" for j in range(dist.dim)]
        write_csv(args.samples_out, cols, [dict(zip(cols, row)) for row in result.x0])
    print(f"solver={kind.name} N={N} nfe={result.nfe}", file=sys.stderr)
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = _config_from(args, args.solvers, [1], [args.seed])
    schedule, dist = build_schedule(cfg), build_distribution(cfg)
    rows = []
    for name in cfg.solvers:
        kind = make_solver(name, **cfg.solver_params)
        oracle = DenoiserOracle(dist, schedule, oracle_mode(kind))
        res = convergence_order(kind, oracle, schedule, args.Ns, args.ref, n_trials=args.trials,
                                seed=args.seed, grid_policy=cfg.grid["policy"])
        for N, err in zip(res.Ns, res.errors):
            rows.append({"solver": name, "N": N, "error": err, "slope": res.slope})
        print(f"{name}: slope={res.slope:.3f}", file=sys.stderr)
    _emit(csv_text(("solver", "N", "error", "slope"), rows), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    seeds = list(range(args.seeds)) if len(args.seed_list) == 0 else args.seed_list
    cfg = _config_from(args, args.solvers, args.steps, seeds, metrics=args.metrics,
                       n_samples=args.n_samples)
    manifest = run_experiment(cfg, workers=args.workers)
    by: dict[tuple, list[float]] = {}
    for row in manifest.metric_rows():
        by.setdefault((row["solver"], row["N"], row["metric_name"]), []).append(row["value"])
    for (solver, N, metric), vals in sorted(by.items()):
        v = np.asarray(vals)
        se = v.std(ddof=1) / np.sqrt(v.size) if v.size > 1 else float("nan")
        print(f"{solver:10s} N={N:<4d} {metric}={v.mean():.5f} se={se:.5f}")
    for c in manifest.cells:
        if c.error:
            print(f"FAILED {c.run_id}: {c.error['type']}: {c.error['message']}", file=sys.stderr)
    print(f"wrote {manifest.metrics_file}", file=sys.stderr)
    return manifest.exit_code


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    manifest = run_experiment(cfg, workers=args.workers)
    for c in manifest.cells:
        if c.error:
            print(f"FAILED {c.run_id}: {c.error['type']}: {c.error['message']}", file=sys.stderr)
    print(f"{len(manifest.cells) - manifest.n_failed}/{len(manifest.cells)} cells ok; "
          f"wrote {manifest.metrics_file}", file=sys.stderr)
    return manifest.exit_code


def cmd_diagnose(args) -> int:
    cfg = _config_from(args, [args.solver], [args.steps], [0])
    schedule, dist = build_schedule(cfg), build_distribution(cfg)
    seeds = range(args.seeds)
    ok = True
    if args.check == "prop1":
        cols = ("seed", "n", "mse", "variance_term", "bias_term", "residual", "standard_error")
        rows = []
        t_pair = (args.t_i, args.t_next)
        for seed in seeds:
            for n in args.n:
                r = reconstruction_decomposition_check(DenoiserOracle(dist, schedule), schedule, t_pair,
                                                       n, np.random.default_rng([seed, n]))
                ok &= r.residual <= 5 * r.standard_error
                rows.append({"seed": seed, "n": n, **r.__dict__})
    elif args.check == "prop2":
        cols = ("i", "var_t", "var_s", "ratio", "delta_h", "upper")
        rows = [{"i": e.i, "var_t": e.var_p1, "var_s": e.var_p2, "ratio": e.ratio,
                 "delta_h": e.delta_h, "upper": e.interval[1]}
                for e in entropy_scan(args.instances, np.random.default_rng(args.seed))]
        ok = all(r["delta_h"] <= 0 for r in rows)
    elif args.check == "thm1":
        cols = ("seed", "i", "t_i", "var_data", "var_noise", "coef_data", "coef_noise", "ordered")
        rows = []
        grid = build_grid(cfg, schedule, cfg.steps[0])
        pair = (DenoiserOracle(dist, schedule, Parameterization.DATA),
                DenoiserOracle(dist, schedule, Parameterization.NOISE))
        for seed in seeds:
            for r in data_vs_noise_variance(pair, schedule, grid, args.n[0], np.random.default_rng(seed)):
                ok &= r.ordered
                rows.append({"seed": seed, "i": r.i, "t_i": r.t, "var_data": r.var_data,
                             "var_noise": r.var_noise, "coef_data": r.coef_data,
                             "coef_noise": r.coef_noise, "ordered": r.ordered})
    else:
        cols = ("solver", "seed") + ENTROPY_COLUMNS
        rows = []
        grid = build_grid(cfg, schedule, cfg.steps[0])
        for name in ("ddim", cfg.solvers[0]):
            kind = make_solver(name, **cfg.solver_params)
            for seed in seeds:
                x_T = initial_noise(schedule, grid, (args.n[0], dist.dim), seed_streams(seed)[0])
                pts = step_variance_trajectory(kind, DenoiserOracle(dist, schedule, oracle_mode(kind)),
                                               grid, schedule, x_T)
                rows += [{"solver": name, "seed": seed, **r} for r in entropy_rows(pts)]
    _emit(csv_text(cols, rows), args.out)
    return EXIT_OK if ok else EXIT_PARTIAL


def oracle_check_rows(instances: int, seed: int, dim: int = 8) -> list[dict]:
    """Closed-form vs grid-search argmins on seeded random instances."""
    rows = []
    for k, (zi, ei) in enumerate(random_instances(instances, dim, np.random.default_rng(seed))):
        z_a, z_p = zeta_star(zi, "analytic"), zeta_star(zi, "literal")
        e_a, e_p = eta_star(ei, "analytic"), eta_star(ei, "literal")
        z_g, e_g = grid_search_min("zeta", zi).argmin, grid_search_min("eta", ei).argmin
        rows.append({"instance": k, "zeta_analytic": z_a, "zeta_grid": z_g, "zeta_delta": abs(z_a - z_g),
                     "zeta_abs_gap": abs(abs(z_p) - abs(z_a)), "eta_analytic": e_a, "eta_literal": e_p,
                     "eta_grid": e_g, "eta_delta": abs(e_a - e_g),
                     "eta_plus_one_gap": abs(e_a - (e_p + 1.0)),
                     "eta_one_minus_gap": abs(e_a - (1.0 - e_p))})
    return rows


def cmd_oracle_check(args) -> int:
    rows = oracle_check_rows(args.instances, args.seed, args.dim)
    if args.report == "json":
        _emit(json.dumps(rows, indent=1) + "\n", args.out)
    else:
        _emit(csv_text(tuple(rows[0]), rows), args.out)
    worst = max(max(r["zeta_delta"], r["eta_delta"]) for r in rows)
    print(f"max closed-form vs grid delta = {worst:.3e} (tolerance {GRID_TOL:g})", file=sys.stderr)
    return EXIT_OK if worst <= GRID_TOL else EXIT_PARTIAL


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evodiff", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"evodiff {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="run one solver and write its step records")
    s.add_argument("--solver", default="evodiff", choices=sorted(SOLVERS))
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-samples", type=int, default=1000)
    s.add_argument("--out", help="step-record CSV (stdout when omitted)")
    s.add_argument("--samples-out", help="optional CSV of final samples")
    s.add_argument("--config", help="TOML config; overrides the flags above")
    _add_model_flags(s)
    _add_solver_flags(s)
    s.set_defaults(func=cmd_sample)

    c = sub.add_parser("convergence", help="refinement study against a fine reference run")
    c.add_argument("--solvers", type=_names, default=["ddim", "dpmpp2m", "evodiff"])
    c.add_argument("--Ns", type=_ints, default=[20, 40, 80])
    c.add_argument("--ref", type=int, default=5120)
    c.add_argument("--trials", type=int, default=64)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    _add_model_flags(c)
    _add_solver_flags(c)
    c.set_defaults(func=cmd_convergence, config=None)

    m = sub.add_parser("compare", help="solver x steps x seeds matrix with sample metrics")
    m.add_argument("--solvers", type=_names, default=["ddim", "dpmpp2m", "evodiff"])
    m.add_argument("--steps", type=_ints, default=[10])
    m.add_argument("--seeds", type=int, default=4, help="use seeds 0..K-1")
    m.add_argument("--seed-list", type=_ints, default=[], help="explicit seeds")
    m.add_argument("--metrics", type=_names, default=["sliced_wasserstein"])
    m.add_argument("--n-samples", type=int, default=1000)
    m.add_argument("--n-reference", type=int, default=None)
    m.add_argument("--workers", type=int, default=1)
    m.add_argument("--out-dir", help="output directory (EVODIFF_OUTPUT_DIR overrides)")
    m.add_argument("--config")
    _add_model_flags(m)
    _add_solver_flags(m)
    m.set_defaults(func=cmd_compare)

    d = sub.add_parser("diagnose", help="variance and entropy checks")
    d.add_argument("--check", required=True, choices=("prop1", "prop2", "thm1", "entropy"))
    d.add_argument("--solver", default="evodiff", choices=sorted(SOLVERS))
    d.add_argument("--steps", type=int, default=20)
    d.add_argument("--seeds", type=int, default=5)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--n", type=_ints, default=[10000], help="sample sizes")
    d.add_argument("--instances", type=int, default=1000)
    d.add_argument("--t-i", type=float, default=0.3)
    d.add_argument("--t-next", type=float, default=0.5)
    d.add_argument("--out")
    _add_model_flags(d)
    _add_solver_flags(d)
    d.set_defaults(func=cmd_diagnose, config=None)

    o = sub.add_parser("oracle-check", help="closed-form optimizers vs brute-force grid search")
    o.add_argument("--instances", type=int, default=1000)
    o.add_argument("--seed", type=int, default=3)
    o.add_argument("--dim", type=int, default=8)
    o.add_argument("--report", choices=("csv", "json"), default="csv")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle_check)

    r = sub.add_parser("run", help="execute an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
    except ValidationError as exc:
        for fieldname, reason, line in exc.errors:
            loc = f" (line {line})" if line is not None else ""
            print(f"invalid {fieldname}: {reason}{loc}", file=sys.stderr)
    except (EvoDiffError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
