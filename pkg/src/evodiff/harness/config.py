"""Experiment configuration: TOML text in, validated ``ExperimentConfig`` out.

Grammar (TOML). Either flat keys::

    solver = "ddim"
    steps = 10
    dist = "gaussian"
    dim = 2
    seed = 1

or sections ``[solver]``, ``[schedule]``, ``[grid]``, ``[oracle]``, ``[experiment]``.
Flat keys are aliases for section keys (see ``FLAT_ALIASES``); list-valued
``solver``/``steps``/``seed`` expand the run matrix.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass

import tomli
import tomli_w

from ..exceptions import ParseError, ValidationError
from ..schedule import GRID_POLICIES, R_STRATEGIES, SCHEDULES
from ..solver import SOLVERS

METRICS = ("sliced_wasserstein", "frechet_gaussian", "mean_error")

SECTIONS = {
    "solver": {"names", "mu", "r_strategy", "eta_formula", "zeta_formula", "reuse_probe",
               "zeta_map", "corrector", "reduction", "r", "gamma", "preset", "r1", "form",
               "interp", "zeta"},
    "schedule": {"kind", "beta0", "beta1", "s", "t_max", "sigma_min", "sigma_max"},
    "grid": {"policy", "rho", "t_start", "t_end"},
    "oracle": {"dist", "dim", "components", "radius", "var", "mean", "weights", "means", "vars"},
    "experiment": {"seeds", "steps", "output", "metrics", "n_samples", "n_reference",
                   "n_projections", "workers", "step_records"},
}

FLAT_ALIASES = {
    "solver": ("solver", "names"), "solvers": ("solver", "names"),
    "steps": ("experiment", "steps"), "seed": ("experiment", "seeds"),
    "seeds": ("experiment", "seeds"), "output": ("experiment", "output"),
    "metrics": ("experiment", "metrics"), "n_samples": ("experiment", "n_samples"),
    "workers": ("experiment", "workers"),
    "schedule": ("schedule", "kind"), "grid": ("grid", "policy"),
    "rho": ("grid", "rho"), "beta0": ("schedule", "beta0"), "beta1": ("schedule", "beta1"),
    "dist": ("oracle", "dist"), "dim": ("oracle", "dim"), "components": ("oracle", "components"),
    "mu": ("solver", "mu"), "r_strategy": ("solver", "r_strategy"),
    "reuse_probe": ("solver", "reuse_probe"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    solvers: tuple[str, ...]
    solver_params: dict
    schedule: dict
    grid: dict
    oracle: dict
    seeds: tuple[int, ...]
    steps: tuple[int, ...]
    output: str = "evodiff_out"
    metrics: tuple[str, ...] = ("sliced_wasserstein",)
    n_samples: int = 1000
    n_reference: int = 10000
    n_projections: int = 128
    workers: int = 1
    step_records: bool = False

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("solvers", "seeds", "steps", "metrics"):
            out[k] = list(out[k])
        return out

    def canonical_json(self) -> str:
        d = self.to_dict()
        d.pop("output")
        d.pop("workers")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON; independent of key order, output path and worker count."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def output_dir(self) -> str:
        return os.environ.get("EVODIFF_OUTPUT_DIR") or self.output

    def to_toml(self) -> str:
        d = self.to_dict()
        sections = {
            "solver": {"names": d["solvers"], **d["solver_params"]},
            "schedule": d["schedule"], "grid": d["grid"], "oracle": d["oracle"],
            "experiment": {k: d[k] for k in ("seeds", "steps", "output", "metrics", "n_samples",
                                             "n_reference", "n_projections", "workers",
                                             "step_records")},
        }
        return tomli_w.dumps({k: {kk: vv for kk, vv in v.items() if vv is not None}
                              for k, v in sections.items()})


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _parse_position(exc: Exception) -> tuple[int | None, int | None]:
    m = re.search(r"line (\d+), column (\d+)", str(exc))
    return (int(m.group(1)), int(m.group(2))) if m else (None, None)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; every problem is reported in one ``ValidationError``."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line, col = _parse_position(exc)
        if line is None and "end of document" in str(exc):
            line, col = text.count("\n") + 1, len(text.rsplit("\n", 1)[-1]) + 1
        raise ParseError(str(exc), line, col) from None

    errors: list[tuple[str, str, int | None]] = []
    sec: dict[str, dict] = {name: {} for name in SECTIONS}
    for key, value in raw.items():
        if key in SECTIONS and isinstance(value, dict):
            for k, v in value.items():
                if k not in SECTIONS[key]:
                    errors.append((f"{key}.{k}", "unknown key", _line_of(text, k)))
                else:
                    sec[key][k] = v
        elif key in FLAT_ALIASES:
            s, k = FLAT_ALIASES[key]
            sec[s][k] = value
        else:
            errors.append((key, "unknown key", _line_of(text, key)))

    def err(fieldname, reason, key=None):
        errors.append((fieldname, reason, _line_of(text, key or fieldname.split(".")[-1])))

    solvers = [str(s) for s in _as_list(sec["solver"].pop("names", []))]
    if not solvers:
        err("solver", "at least one solver required", "solver")
    for s in solvers:
        if s not in SOLVERS:
            err("solver", f"unknown solver {s!r}; choose from {sorted(SOLVERS)}", "solver")

    r_kind = sec["solver"].get("r_strategy")
    if r_kind is not None and r_kind not in R_STRATEGIES:
        err("solver.r_strategy", f"unknown r-strategy {r_kind!r}")
    mu = sec["solver"].get("mu")
    if mu is not None and not (isinstance(mu, (int, float)) and 0 <= mu <= 1):
        err("solver.mu", "mu must lie in [0, 1]")

    schedule = {"kind": "vp_linear", **sec["schedule"]}
    if schedule["kind"] not in SCHEDULES:
        err("schedule.kind", f"unknown schedule {schedule['kind']!r}", "schedule")
    grid = {"policy": "logsnr", **sec["grid"]}
    if grid["policy"] not in GRID_POLICIES:
        err("grid.policy", f"unknown grid policy {grid['policy']!r}", "grid")

    oracle = {"dist": "gaussian", "dim": 2, **sec["oracle"]}
    if oracle["dist"] not in ("gaussian", "gmm"):
        err("oracle.dist", f"unknown distribution {oracle['dist']!r}", "dist")
    if not (isinstance(oracle["dim"], int) and oracle["dim"] >= 1):
        err("oracle.dim", "dimension must be an integer >= 1 (d >= 1)", "dim")
    if "components" in oracle and not (isinstance(oracle["components"], int) and oracle["components"] >= 1):
        err("oracle.components", "components must be an integer >= 1")

    ex = sec["experiment"]
    steps = _as_list(ex.get("steps", [10]))
    if not steps or any(not isinstance(n, int) or isinstance(n, bool) or n < 1 for n in steps):
        err("experiment.steps", "steps must be integers with N >= 1", "steps")
    seeds = _as_list(ex.get("seeds", [0]))
    if not seeds or any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in seeds):
        err("experiment.seeds", "seeds must be a non-empty list of integers >= 0", "seed")
    metrics = [str(m) for m in _as_list(ex.get("metrics", ["sliced_wasserstein"]))]
    for m in metrics:
        if m not in METRICS:
            err("experiment.metrics", f"unknown metric {m!r}; choose from {METRICS}", "metrics")
    ints = {}
    for k, default, lo in (("n_samples", 1000, 2), ("n_reference", 10000, 2),
                           ("n_projections", 128, 32), ("workers", 1, 1)):
        v = ex.get(k, default)
        if not isinstance(v, int) or isinstance(v, bool) or v < lo:
            err(f"experiment.{k}", f"{k} must be an integer >= {lo}")
        ints[k] = v
    output = ex.get("output", "evodiff_out")
    if not isinstance(output, str) or not output:
        err("experiment.output", "output must be a non-empty path")

    if errors:
        raise ValidationError(errors)
    return ExperimentConfig(
        solvers=tuple(solvers), solver_params=dict(sec["solver"]), schedule=schedule, grid=grid,
        oracle=oracle, seeds=tuple(seeds), steps=tuple(steps), output=output,
        metrics=tuple(metrics), step_records=bool(ex.get("step_records", False)), **ints)


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
