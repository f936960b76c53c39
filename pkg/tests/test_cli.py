import csv
import json

import numpy as np
import pytest

from bubble_hjb.cli import EXIT_CONFIG, EXIT_OK, main


def records(out):
    return [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]


def run_cli(*args):
    return main([str(a) for a in args])


def test_solve_zero_only(configs_dir, tmp_path):
    assert run_cli("solve", "--config", configs_dir / "zero_only.cfg", "--out", tmp_path,
                   "--n", 129) == EXIT_OK
    with open(tmp_path / "u.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 129
    assert all(float(r["value"]) == 0.0 for r in rows)
    recs = records(tmp_path)
    assert recs[-1] == {"kind": "summary", "command": "solve", "checks": 3, "pass": True}
    assert (tmp_path / "u.svg").read_text().lstrip().startswith("<?xml")


def test_eigen(configs_dir, tmp_path):
    assert run_cli("eigen", "--config", configs_dir / "zero_only.cfg", "--out", tmp_path,
                   "--n", 65) == EXIT_OK
    info = next(r for r in records(tmp_path) if r["name"] == "eigen")
    assert info["lambda1"] == pytest.approx(0.5, abs=1e-10)
    assert info["regime"] == "ZeroOnly"


def test_branch_outputs(configs_dir, tmp_path):
    assert run_cli("branch", "--config", configs_dir / "branch_demo.cfg", "--out", tmp_path,
                   "--n", 129) == EXIT_OK
    with open(tmp_path / "branch.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eps", "lambda", "sup_norm"] and len(rows) == 91
    assert (tmp_path / "branch.svg").exists()
    assert all(r["pass"] for r in records(tmp_path) if r["kind"] == "check")


@pytest.mark.parametrize("name", ["crypto_quick", "realestate_demo"])
def test_scenario_outputs(configs_dir, tmp_path, name):
    assert run_cli("scenario", "--config", configs_dir / f"{name}.cfg", "--out", tmp_path,
                   "--n", 257) == EXIT_OK
    for f in ("u.csv", "allocation.csv", "threshold.csv", "allocation.svg", "threshold.svg"):
        assert (tmp_path / f).exists()
    threshold = next(r for r in records(tmp_path) if r["name"] == "threshold")
    assert threshold["shift"] is not None
    with open(tmp_path / "allocation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["demand"] == "undefined" and rows[-1]["demand"] == "undefined"
    demand = np.array([float(r["demand"]) for r in rows[1:-1]])
    assert np.all(np.isfinite(demand))


def test_outputs_are_deterministic(configs_dir, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert run_cli("branch", "--config", configs_dir / "branch_demo.cfg", "--out", out,
                       "--n", 65) == EXIT_OK
    for f in ("branch.csv", "branch.svg", "report.jsonl"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_bad_config_exits_with_config_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[problem]\nnu = 0.1\nepsilon = -1\na = const(1)\n")
    assert run_cli("solve", "--config", cfg, "--out", tmp_path) == EXIT_CONFIG
    assert "line 3, key 'epsilon'" in capsys.readouterr().err
    assert run_cli("solve", "--config", tmp_path / "nope.cfg") == EXIT_CONFIG


def test_bad_overrides(configs_dir, tmp_path):
    base = ["solve", "--config", configs_dir / "zero_only.cfg", "--out", tmp_path]
    assert run_cli(*base, "--n", 2) == EXIT_CONFIG
    assert run_cli(*base, "--seed", -1) == EXIT_CONFIG
