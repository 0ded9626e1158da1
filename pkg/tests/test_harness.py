import csv
import json

import numpy as np
import pytest

from evodiff.diagnostics import TrajectoryPoint, step_variance_trajectory
from evodiff.exceptions import ParseError, ValidationError
from evodiff.harness import emit_entropy_trajectory, parse_config, run_experiment, seed_streams
from evodiff.harness.cli import main
from evodiff.harness.experiment import run_cell
from evodiff.oracle import DenoiserOracle
from evodiff.schedule import make_grid
from evodiff.solver import DDIM, expected_nfe, make_solver

MINIMAL = 'solver = "ddim"\nsteps = 10\ndist = "gaussian"\ndim = 2\nseed = 1\n'

SECTIONED = """
[solver]
names = ["ddim", "dpmpp2m", "evodiff"]
mu = 0.5

[schedule]
kind = "vp_linear"

[grid]
policy = "logsnr"

[oracle]
dist = "gmm"
dim = 2
components = 4

[experiment]
steps = [5, 10, 20]
seeds = [0, 1, 2, 3]
metrics = ["sliced_wasserstein", "mean_error"]
n_samples = 200
n_reference = 200
"""


def test_minimal_config_valid():
    cfg = parse_config(MINIMAL)
    assert cfg.solvers == ("ddim",) and cfg.steps == (10,) and cfg.seeds == (1,)
    assert cfg.oracle == {"dist": "gaussian", "dim": 2}


def test_unknown_solver_names_field():
    with pytest.raises(ValidationError) as exc:
        parse_config(MINIMAL.replace('"ddim"', '"rk45"'))
    assert exc.value.fields == ["solver"]
    assert exc.value.errors[0][2] == 1


def test_zero_steps_rejected():
    with pytest.raises(ValidationError) as exc:
        parse_config(MINIMAL.replace("steps = 10", "steps = 0"))
    assert "experiment.steps" in exc.value.fields
    assert "N >= 1" in str(exc.value)
    assert exc.value.errors[0][2] == 2


def test_errors_are_aggregated():
    text = 'solver = "nope"\nsteps = 0\ndim = 0\ncolour = "red"\n[grid]\npolicy = "odd"\n'
    with pytest.raises(ValidationError) as exc:
        parse_config(text)
    assert set(exc.value.fields) == {"solver", "experiment.steps", "oracle.dim", "colour", "grid.policy"}


def test_parse_error_has_position():
    with pytest.raises(ParseError) as exc:
        parse_config('solver = "ddim"\nsteps = = 3\n')
    assert exc.value.line == 2 and exc.value.column is not None


def test_hash_stable_under_reordering():
    a = parse_config(SECTIONED)
    blocks = SECTIONED.strip().split("\n\n")
    b = parse_config("\n\n".join(reversed(blocks)))
    assert a.config_hash() == b.config_hash()
    assert parse_config(a.to_toml()).config_hash() == a.config_hash()
    assert parse_config(SECTIONED.replace("mu = 0.5", "mu = 0.6")).config_hash() != a.config_hash()


def test_seed_streams_independent():
    noise, mc, proj = seed_streams(3)
    again = seed_streams(3)
    assert noise.standard_normal() == again[0].standard_normal()
    assert len({noise.random(), mc.random(), proj.random()}) == 3


def test_one_solver_one_seed(tmp_path):
    cfg = parse_config(MINIMAL + f'metrics = ["sliced_wasserstein", "mean_error"]\noutput = "{tmp_path}"\n')
    m = run_experiment(cfg)
    rows = list(csv.DictReader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 2 and {r["metric_name"] for r in rows} == {"sliced_wasserstein", "mean_error"}
    assert m.exit_code == 0 and rows[0]["nfe"] == "10"
    manifest = json.load(open(tmp_path / "manifest.json"))
    assert manifest["config_hash"] == cfg.config_hash() and len(manifest["runs"]) == 1


def test_matrix_nfe_and_determinism(tmp_path, monkeypatch):
    cfg = parse_config(SECTIONED)
    monkeypatch.setenv("EVODIFF_OUTPUT_DIR", str(tmp_path / "a"))
    m1 = run_experiment(cfg, workers=1)
    monkeypatch.setenv("EVODIFF_OUTPUT_DIR", str(tmp_path / "b"))
    m2 = run_experiment(cfg, workers=4)
    assert len(m1.cells) == 36
    for c in m1.cells:
        assert c.nfe == c.expected_nfe == expected_nfe(make_solver(c.solver), c.N)
    body1 = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert body1 == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert len(body1.splitlines()) == 1 + 36 * 2
    assert [c.run_id for c in m1.cells] == [c.run_id for c in m2.cells]


def test_failed_cell_recorded(tmp_path):
    text = MINIMAL.replace('solver = "ddim"\n', "")
    cfg = parse_config(text + f'output = "{tmp_path}"\n[solver]\nnames = ["dpm2s", "ddim"]\nr1 = 2.0\n')
    m = run_experiment(cfg)
    failed = [c for c in m.cells if c.error]
    assert [c.solver for c in failed] == ["dpm2s"] and failed[0].error["type"] == "DomainError"
    assert m.exit_code == 1


def test_step_records_written(tmp_path):
    text = f'solver = "evodiff"\nsteps = 6\nseed = 2\n[experiment]\noutput = "{tmp_path}"\nstep_records = true\n'
    m = run_experiment(parse_config(text))
    rows = list(csv.DictReader(open(m.cells[0].step_file)))
    assert list(rows[0]) == ["i", "t_i", "zeta", "eta", "r", "zeta_raw", "eta_raw", "nfe", "fallback_flags"]
    assert len(rows) == 6 and rows[0]["fallback_flags"] == "warmup"


def test_run_cell_pairs_noise_across_solvers():
    cfg = parse_config(MINIMAL)
    a, b = run_cell(cfg, "ddim", 10, 1), run_cell(cfg, "ddim", 10, 1)
    assert a.metrics == b.metrics


def test_entropy_trajectory_csv(gauss, vp, tmp_path):
    g = make_grid(vp, "logsnr", 1)
    pts = step_variance_trajectory(DDIM(), DenoiserOracle(gauss, vp), g, vp, np.ones((8, 2)))
    text = emit_entropy_trajectory(pts, str(tmp_path / "h.csv"))
    lines = text.strip().splitlines()
    assert lines[0] == "i,t_i,var_estimate,entropy_estimate" and len(lines) == 2
    assert (tmp_path / "h.csv").read_text() == text
    with pytest.raises(ValidationError):
        emit_entropy_trajectory([TrajectoryPoint(1, 0.5, 0.1, 0)])


# ------------------------------------------------------------------- CLI

def test_cli_sample(tmp_path, capsys):
    out = tmp_path / "run.csv"
    code = main(["sample", "--solver", "evodiff", "--steps", "10", "--mu", "0.5", "--r-strategy",
                 "logsnr", "--reuse-probe", "--seed", "7", "--out", str(out), "--n-samples", "64"])
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 10 and sum(int(r["nfe"]) for r in rows) == 11
    assert "nfe=11" in capsys.readouterr().err


def test_cli_sample_is_deterministic(tmp_path):
    args = ["sample", "--solver", "dpmpp2m", "--steps", "5", "--seed", "3", "--n-samples", "32"]
    main(args + ["--out", str(tmp_path / "a.csv"), "--samples-out", str(tmp_path / "xa.csv")])
    main(args + ["--out", str(tmp_path / "b.csv"), "--samples-out", str(tmp_path / "xb.csv")])
    assert (tmp_path / "xa.csv").read_bytes() == (tmp_path / "xb.csv").read_bytes()


def test_cli_oracle_check(tmp_path):
    out = tmp_path / "oc.csv"
    assert main(["oracle-check", "--instances", "20", "--seed", "3", "--report", "csv", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 20 and max(float(r["zeta_delta"]) for r in rows) <= 2e-4
    assert main(["oracle-check", "--instances", "3", "--report", "json", "--out", str(tmp_path / "o.json")]) == 0
    assert len(json.load(open(tmp_path / "o.json"))) == 3


@pytest.mark.parametrize("check", ["prop1", "prop2", "thm1", "entropy"])
def test_cli_diagnose(check, tmp_path):
    out = tmp_path / f"{check}.csv"
    code = main(["diagnose", "--check", check, "--seeds", "2", "--n", "2000", "--instances", "50",
                 "--steps", "8", "--out", str(out)])
    assert code == 0
    assert len(out.read_text().splitlines()) > 1


def test_cli_convergence(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["convergence", "--solvers", "ddim", "--Ns", "5,10", "--ref", "160", "--trials", "8",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["N"] for r in rows] == ["5", "10"]


def test_cli_compare_and_run(tmp_path, monkeypatch):
    monkeypatch.setenv("EVODIFF_OUTPUT_DIR", str(tmp_path / "cmp"))
    assert main(["compare", "--solvers", "ddim,evodiff", "--steps", "4", "--seeds", "2",
                 "--n-samples", "100", "--n-reference", "100"]) == 0
    assert (tmp_path / "cmp" / "metrics.csv").exists()
    cfg = tmp_path / "exp.toml"
    cfg.write_text(MINIMAL)
    monkeypatch.setenv("EVODIFF_OUTPUT_DIR", str(tmp_path / "run"))
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "run" / "manifest.json").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('solver = "bogus"\nsteps = 0\n')
    assert main(["run", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "invalid solver" in err and "line 1" in err
    bad.write_text("solver = [\n")
    assert main(["run", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["sample", "--solver", "rk4"])
    assert exc.value.code == 2
