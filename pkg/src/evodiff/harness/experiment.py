"""Run matrices of (solver, steps, seed) cells and persist CSV/JSON outputs."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..diagnostics import TrajectoryPoint, frechet_gaussian, sliced_wasserstein
from ..exceptions import EvoDiffError, ValidationError
from ..oracle import DenoiserOracle, distribution_from_dict
from ..schedule import make_grid, schedule_from_dict
from ..solver import RunResult, expected_nfe, initial_noise, make_solver, oracle_mode, run
from .config import ExperimentConfig

METRIC_COLUMNS = ("run_id", "solver", "N", "nfe", "seed", "metric_name", "value")
STEP_COLUMNS = ("i", "t_i", "zeta", "eta", "r", "zeta_raw", "eta_raw", "nfe", "fallback_flags")
ENTROPY_COLUMNS = ("i", "t_i", "var_estimate", "entropy_estimate")

STREAM_NOISE, STREAM_METRICS, STREAM_PROJECTIONS = 0, 1, 2


def seed_streams(seed: int) -> tuple[np.random.Generator, ...]:
    """Independent generators for (initial noise, Monte-Carlo metrics, projections).

    Streams are addressed by spawn key, so adding a metric never perturbs sampling.
    """
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(int(seed)).spawn(3))


def fmt(value) -> str:
    """Deterministic text form for CSV cells."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (tuple, list)):
        return "|".join(map(str, value))
    return str(value)


def write_csv(path: str, columns, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(csv_text(columns, rows))


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def step_rows(result: RunResult) -> list[dict]:
    rows = []
    for row in result.record_rows():
        rows.append({k: row[k] for k in STEP_COLUMNS})
    return rows


def entropy_rows(points: list[TrajectoryPoint]) -> list[dict]:
    return [{"i": p.i, "t_i": p.t, "var_estimate": p.var_estimate,
             "entropy_estimate": p.entropy_estimate} for p in points]


def emit_entropy_trajectory(points: list[TrajectoryPoint], path: str | None = None) -> str:
    """Per-step ``(i, t_i, var_estimate, entropy_estimate)`` CSV; written when ``path`` is given."""
    if any(p.dim < 1 for p in points):
        raise ValidationError([("dim", "dimension must be >= 1", None)])
    text = csv_text(ENTROPY_COLUMNS, entropy_rows(points))
    if path is not None:
        write_csv(path, ENTROPY_COLUMNS, entropy_rows(points))
    return text


@dataclass
class CellResult:
    run_id: str
    solver: str
    N: int
    seed: int
    nfe: int | None = None
    expected_nfe: int | None = None
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    error: dict | None = None
    step_file: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunManifest:
    config_hash: str
    artifact_version: str
    config: dict
    cells: list[CellResult]
    metrics_file: str | None = None

    @property
    def n_failed(self) -> int:
        return sum(c.error is not None for c in self.cells)

    @property
    def exit_code(self) -> int:
        """0 success, 1 partial failure, 2 total failure."""
        if self.n_failed == 0:
            return 0
        return 2 if self.n_failed == len(self.cells) else 1

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "artifact_version": self.artifact_version,
                "config": self.config, "metrics_file": self.metrics_file,
                "runs": [c.to_dict() for c in self.cells]}

    def metric_rows(self) -> list[dict]:
        rows = []
        for c in self.cells:
            for name, value in c.metrics.items():
                rows.append({"run_id": c.run_id, "solver": c.solver, "N": c.N, "nfe": c.nfe,
                             "seed": c.seed, "metric_name": name, "value": value})
        rows.sort(key=lambda r: (r["solver"], r["N"], r["seed"], r["metric_name"], r["run_id"]))
        return rows


def build_schedule(cfg: ExperimentConfig):
    return schedule_from_dict(cfg.schedule)


def build_distribution(cfg: ExperimentConfig):
    return distribution_from_dict(cfg.oracle)


def build_grid(cfg: ExperimentConfig, schedule, N: int):
    g = cfg.grid
    return make_grid(schedule, g["policy"], N, g.get("t_start"), g.get("t_end"), g.get("rho", 7.0))


def run_id(solver: str, N: int, seed: int) -> str:
    return f"{solver}-N{N}-s{seed}"


def _metrics(cfg, dist, samples, seed) -> dict:
    _, rng_mc, rng_proj = seed_streams(seed)
    ref = dist.sample(cfg.n_reference, rng_mc)
    out = {}
    for name in cfg.metrics:
        if name == "sliced_wasserstein":
            n = min(len(ref), len(samples))
            out[name] = sliced_wasserstein(samples[:n], ref[:n], cfg.n_projections, rng_proj)
        elif name == "frechet_gaussian":
            out[name] = frechet_gaussian(samples, ref)
        elif name == "mean_error":
            out[name] = float(np.linalg.norm(samples.mean(axis=0) - ref.mean(axis=0)))
    return out


def run_cell(cfg: ExperimentConfig, solver: str, N: int, seed: int,
             step_dir: str | None = None) -> CellResult:
    """One solver run plus its metrics. Module errors are captured, not raised."""
    cell = CellResult(run_id(solver, N, seed), solver, N, seed)
    start = time.perf_counter()
    try:
        schedule = build_schedule(cfg)
        dist = build_distribution(cfg)
        kind = make_solver(solver, **cfg.solver_params)
        grid = build_grid(cfg, schedule, N)
        oracle = DenoiserOracle(dist, schedule, oracle_mode(kind))
        rng_noise = seed_streams(seed)[STREAM_NOISE]
        x_T = initial_noise(schedule, grid, (cfg.n_samples, dist.dim), rng_noise)
        result = run(kind, oracle, grid, schedule, x_T)
        cell.nfe = result.nfe
        cell.expected_nfe = expected_nfe(kind, N)
        cell.metrics = _metrics(cfg, dist, result.x0, seed)
        if step_dir is not None:
            cell.step_file = os.path.join(step_dir, f"{cell.run_id}.csv")
            write_csv(cell.step_file, STEP_COLUMNS, step_rows(result))
    except (EvoDiffError, ValueError, ArithmeticError) as exc:
        cell.error = {"type": type(exc).__name__, "message": str(exc),
                      "index": getattr(exc, "index", None)}
    cell.wall_time = time.perf_counter() - start
    return cell


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, write: bool = True) -> RunManifest:
    """Execute the full solver x steps x seed matrix.

    Cells run concurrently on a thread pool; each owns its oracle and history.
    Rows are sorted before writing, so output bytes do not depend on scheduling.
    """
    workers = cfg.workers if workers is None else int(workers)
    out_dir = cfg.output_dir()
    step_dir = os.path.join(out_dir, "steps") if (write and cfg.step_records) else None
    jobs = [(s, n, seed) for s in cfg.solvers for n in cfg.steps for seed in cfg.seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda j: run_cell(cfg, *j, step_dir=step_dir), jobs))
    else:
        cells = [run_cell(cfg, *j, step_dir=step_dir) for j in jobs]
    cells.sort(key=lambda c: (c.solver, c.N, c.seed))
    manifest = RunManifest(cfg.config_hash(), __version__, cfg.to_dict(), cells)
    if write:
        metrics_path = os.path.join(out_dir, "metrics.csv")
        write_csv(metrics_path, METRIC_COLUMNS, manifest.metric_rows())
        manifest.metrics_file = metrics_path
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True, default=fmt)
    return manifest
