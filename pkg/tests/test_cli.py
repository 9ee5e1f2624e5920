import csv
import subprocess
import sys

import pytest

from skmsaa.cli import main

SMALL = ["--set", "problem.lambda_reg = 0.01", "--set", "process.ar.dim = 6",
         "--set", "process.ar.sparsity = 2", "--set", "experiment.budget = 40",
         "--set", "experiment.eval_size = 200", "--set", "experiment.burn_in = 20",
         "--set", "run.delta = null"]


def cli(tmp_path, *args):
    return main([*args, "--out", str(tmp_path), *SMALL])


def test_help_documents_config_keys(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for text in ("process.ar.dim", "problem.lambda_reg", "coverage.replications", "exit status"):
        assert text in out


def test_simulate(tmp_path, capsys):
    assert cli(tmp_path, "simulate", "--set", "simulate.length = 25") == 0
    rows = list(csv.reader(open(tmp_path / "trajectory.csv")))
    assert rows[0] == ["k", "x1", "x2", "x3", "x4", "x5", "x6", "y"] and len(rows) == 26


def test_solve(tmp_path, capsys):
    assert cli(tmp_path, "solve", "--strategy", "SP-2") == 0
    assert "SP-2: status=budget-exhausted iterations=40" in capsys.readouterr().out
    rows = list(csv.reader(open(tmp_path / "run.csv")))
    assert rows[0] == ["k", "fpr", "regret", "dist", "samples"] and rows[-1][4] == "79"


def test_bounds(tmp_path, capsys):
    assert cli(tmp_path, "bounds", "--set", "bounds.j_hat = 0.4", "--set", "bounds.l_cap = 5") == 0
    out = capsys.readouterr().out
    assert "out_of_sample" in out and "bound_name,value,source,flags,inputs_json" in out
    names = [r[0] for r in csv.reader(open(tmp_path / "bounds.csv"))][1:]
    assert names == ["epsilon_radius", "out_of_sample", "approx_error", "fpr", "deviation"]


def test_bounds_markov_uses_mixing_profile(tmp_path):
    args = ["bounds", "--out", str(tmp_path), "--set", "process.kind = markov",
            "--set", "process.markov.matrix = [[0.9, 0.1], [0.1, 0.9]]",
            "--set", "process.markov.features = [[1.0], [-1.0]]",
            "--set", "problem.lambda_reg = 0", "--set", "algorithm.name = SGD",
            "--set", "algorithm.gamma = 0.1", "--set", "run.radius = 2", "--set", "experiment.budget = 50",
            "--set", "bounds.tau = 2", "--set", "run.delta = null"]
    assert main(args) == 0
    rows = {r[0]: r for r in csv.reader(open(tmp_path / "bounds.csv"))}
    import json
    inputs = json.loads(rows["deviation"][4])
    assert inputs["phi1"] == pytest.approx(0.8, abs=1e-12)
    assert inputs["phi_tau1"] == pytest.approx(0.8 ** 3, abs=1e-12)


def test_experiment_and_charts(tmp_path, capsys):
    assert cli(tmp_path, "experiment", "--strategy", "SP", "--strategy", "MR-2", "--seed", "5") == 0
    assert (tmp_path / "summary.csv").exists()
    assert sorted(p.name for p in (tmp_path / "charts").iterdir()) == ["dist.svg", "fpr.svg", "regret.svg"]
    assert "process.seed = 5" in (tmp_path / "config.txt").read_text()


def test_coverage(tmp_path, capsys):
    assert cli(tmp_path, "coverage", "--set", "coverage.replications = 3",
               "--set", "coverage.test_pool = 1000") == 0
    assert "violations=" in capsys.readouterr().out
    assert (tmp_path / "coverage.csv").exists()


def test_config_errors_exit_1(tmp_path, capsys):
    assert cli(tmp_path, "solve", "--set", "nope = 1") == 1
    assert main(["solve", "--out", str(tmp_path)]) == 1  # lambda_reg missing
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert cli(tmp_path, "solve", "--strategy", "SP-1") == 1
    assert cli(tmp_path, "solve", "--seed", str(2 ** 64)) == 1
    assert "config error" in capsys.readouterr().err


def test_runtime_failure_exit_2(tmp_path, capsys):
    assert cli(tmp_path, "solve", "--set", "algorithm.name = SGD") == 2
    assert cli(tmp_path, "experiment", "--set", "algorithm.name = SGD") == 2
    assert "error:" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "skmsaa.cli", "bounds", "--out", str(tmp_path),
                           "--set", "problem.lambda_reg=0.01", "--set", "bounds.r=1",
                           "--set", "bounds.r_expect=1", "--set", "bounds.kappa_sum=0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("epsilon_radius")
