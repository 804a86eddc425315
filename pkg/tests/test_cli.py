from __future__ import annotations

import json

import pytest

from impulsive_lorenz.cli import main
from impulsive_lorenz.conditions import ConditionReport
from impulsive_lorenz.config import ExperimentConfig

SMALL = {"measure": {"seeds": 100, "burn_in": 100, "orbit_length": 2000, "thin": 5},
         "impulse": {"epsilon": 0.05}, "epsilons": [0.1, 0.0],
         "conditions": {"h3_n": [0, 1, 2]}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def run(command, config, out, *extra):
    return main([command, "--config", config, "--out", str(out), *extra])


@pytest.mark.parametrize("command, files", [
    ("simulate", ["trajectory.csv", "taus.json"]),
    ("section-map", ["section_orbit.csv", "section_orbit.svg"]),
    ("measure", ["measure.csv", "measure.bin", "measure.json", "measure.svg"]),
    ("basins", ["basins.json"]),
    ("entropy", ["entropy.json"]),
    ("stability-sweep", ["sweep.json", "sweep.csv", "sweep_distance.svg", "sweep_entropy.svg"]),
    ("check-conditions", ["conditions.json", "h3_table.csv"]),
])
def test_commands_write_outputs_deterministically(command, files, config, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(command, config, a) == 0
    assert run(command, config, b) == 0
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ca, cb = (json.loads((d / "config.json").read_text()) for d in (a, b))
    assert ca.pop("out") != cb.pop("out") and ca == cb
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["command"] == command


def test_written_config_reloads(config, tmp_path):
    assert run("simulate", config, tmp_path / "o") == 0
    cfg = ExperimentConfig.from_json((tmp_path / "o" / "config.json").read_text())
    assert cfg.impulse.epsilon == 0.05 and cfg.out == str(tmp_path / "o")


def test_conditions_report_reloads(config, tmp_path):
    assert run("check-conditions", config, tmp_path / "o") == 0
    rep = ConditionReport.from_json((tmp_path / "o" / "conditions.json").read_text())
    assert rep.epsilon == 0.05


def test_sweep_schema(config, tmp_path):
    assert run("stability-sweep", config, tmp_path / "o") == 0
    d = json.loads((tmp_path / "o" / "sweep.json").read_text())
    assert d["schema"] == "stability-sweep/1"
    assert [r["epsilon"] for r in d["rows"]] == [0.1, 0.0]
    assert d["rows"][1]["distance"] == 0.0


def test_seed_changes_output(config, tmp_path):
    assert run("measure", config, tmp_path / "a", "--seed", "1") == 0
    assert run("measure", config, tmp_path / "b", "--seed", "2") == 0
    assert (tmp_path / "a" / "measure.bin").read_bytes() != (tmp_path / "b" / "measure.bin").read_bytes()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"unknown": 1}')
    assert main(["measure", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError"
    assert main(["measure", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["nonsense"]) == 2
    assert main(["measure", "--workers", "0", "--out", str(tmp_path / "o")]) == 2


def test_numerical_failure_exits_3(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    # a trapping ball smaller than the attractor turns every orbit into an escape
    cfg.write_text(json.dumps({"backend": "ode", "integrator": {"trapping_radius": 5.0}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "Escape"


def test_ode_simulate(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"backend": "ode", "impulse": {"epsilon": 0.05},
                               "simulate": {"T": 3.0, "dt": 0.05}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    taus = json.loads((tmp_path / "o" / "taus.json").read_text())
    assert taus["taus"][0] == 0 and taus["n_impulses"] >= 1
