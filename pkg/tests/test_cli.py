import csv
import json
import os
import pathlib

import numpy as np
import pytest

from seapath import cli, config
from seapath.config import ConfigError

CONFIGS = pathlib.Path(__file__).resolve().parents[1] / "configs"
DEMO = CONFIGS / "demo_two_state.toml"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(*args):
    return cli.main(list(args))


def test_demo_converges(tmp_path):
    out = tmp_path / "out"
    assert run("simulate", str(DEMO), "--out-dir", str(out), "--quiet") == 0
    summary = json.loads((out / "demo_two_state.summary.json").read_text())
    assert summary["status"] == "converged"
    np.testing.assert_allclose(summary["endpoint_distribution"], [0.5, 0.5], atol=1e-8)
    assert summary["beta"][0] == pytest.approx(np.log(2), abs=1e-8)
    with open(out / "demo_two_state.trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "p_1", "p_2", "S", "Pi_S", "DoD", "ell", "drift_max"]
    assert float(rows[-1][6]) == pytest.approx(summary["d_sea"])


def test_byte_identical_reruns(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", str(DEMO), "--out-dir", str(tmp_path / d), "--quiet") == 0
    for name in ("demo_two_state.trajectory.csv", "demo_two_state.summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_full_precision(tmp_path):
    run("simulate", str(DEMO), "--out-dir", str(tmp_path), "--quiet")
    line = (tmp_path / "demo_two_state.trajectory.csv").read_text().splitlines()[2]
    values = line.split(",")
    assert all(v == f"{float(v):.17g}" for v in values)


def test_round_trip_of_echoed_config(tmp_path):
    for cfg_path in sorted(CONFIGS.glob("*.toml")):
        original = config.load(cfg_path)
        run("simulate", str(cfg_path), "--out-dir", str(tmp_path), "--quiet")
        echoed = json.loads((tmp_path / f"{cfg_path.stem}.summary.json").read_text())["config"]
        assert config.from_dict(echoed) == original


def test_defaults_are_echoed(tmp_path):
    path = write(tmp_path, "min.toml", "[problem]\nprobabilities = [0.7, 0.3]\n")
    run("simulate", path, "--out-dir", str(tmp_path), "--quiet")
    echoed = json.loads((tmp_path / "min.summary.json").read_text())["config"]
    assert echoed["integrator"]["rel_tol"] == 1e-8
    assert echoed["integrator"]["stop_dod"] == 1e-16
    assert echoed["metric"]["kind"] == "uniform"
    assert echoed["tau"] == {"mode": "constant", "value": 1.0}
    assert echoed["kb"] == 1.0


def test_duplicate_rows_exit_2(tmp_path, capsys):
    path = write(tmp_path, "dup.toml", "[problem]\nprobabilities = [0.2, 0.3, 0.5]\n"
                 "constraints = [[0.0, 1.0, 2.0], [0.0, 1.0, 2.0]]\n")
    assert run("simulate", path, "--out-dir", str(tmp_path)) == 2
    assert "rows 0 (C0) and 1 (C1)" in capsys.readouterr().err


def test_forced_timeout_exit_5(tmp_path):
    path = write(tmp_path, "slow.toml", "[problem]\nprobabilities = [0.9, 0.1]\n"
                 "[integrator]\nstop_dod = 1e-16\nmax_time = 1e-6\n")
    assert run("simulate", path, "--out-dir", str(tmp_path), "--quiet") == 5
    lines = (tmp_path / "slow.trajectory.csv").read_text().splitlines()
    assert len(lines) >= 3
    assert json.loads((tmp_path / "slow.summary.json").read_text())["status"] == "max_time_reached"


def test_parse_error_names_line(tmp_path, capsys):
    path = write(tmp_path, "bad.toml", "[problem]\nprobabilities = [0.9, 0.1]\nkb = = 2\n")
    assert run("simulate", path, "--out-dir", str(tmp_path)) == 2
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize("text, field", [
    ("[problem]\nprobabilities = [0.9, 0.1]\n[integrator]\nrel_tol = -1\n", "integrator.rel_tol"),
    ("[problem]\nprobabilities = [0.9, 0.1]\n[metric]\nkind = \"round\"\n", "metric.kind"),
    ("[problem]\nprobabilities = [0.9, 0.1]\n[tau]\nmode = \"constant\"\nvalue = 0\n", "tau.value"),
    ("[problem]\nprobabilities = [0.9, -0.1]\n", "problem.probabilities"),
    ("[problem]\nprobabilities = [0.9, 0.1]\ncolour = 1\n", "problem.colour"),
    ("[problem]\nprobabilities = [0.9, 0.1]\n[metric]\nkind = \"diagonal\"\nweights = [1.0]\n", "metric.weights"),
    ("[problem]\nprobabilities = [0.6, 0.1]\n", "problem.probabilities"),
    ("[metric]\nkind = \"uniform\"\n", "problem"),
])
def test_field_addressed_errors(tmp_path, text, field):
    path = write(tmp_path, "c.toml", text)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        cfg = config.load(path)
        cfg.build_metric(cfg.build_problem()[1].n)


def test_missing_file_exit_2(tmp_path):
    assert run("simulate", str(tmp_path / "nope.toml"), "--quiet") == 2


def test_maxent_examples(tmp_path):
    cases = {
        "norm.toml": ("[problem]\nconstraints = []\nprobabilities = [0.1, 0.2, 0.3, 0.4]\n", [0.25] * 4),
        "sym.toml": ("[problem]\nconstraints = [[0.0, 1.0]]\ntargets = [0.5]\n", [0.5, 0.5]),
        "three.toml": ("[problem]\nconstraints = [[0.0, 1.0, 2.0]]\ntargets = [0.4]\n",
                       [0.6818665418227489, 0.23626691635450214, 0.08186654182274901]),
    }
    for name, (text, expected) in cases.items():
        path = write(tmp_path, name, text)
        assert run("maxent", path, "--out-dir", str(tmp_path), "--quiet") == 0
        doc = json.loads((tmp_path / name.replace(".toml", ".maxent.json")).read_text())
        np.testing.assert_allclose(doc["distribution"], expected, atol=1e-12)
        assert len(doc["dual_multipliers"]) == len(doc["constraint_names"])


def test_maxent_infeasible_exit_3(tmp_path):
    path = write(tmp_path, "inf.toml", "[problem]\nconstraints = [[0.0, 1.0, 2.0]]\ntargets = [2.0]\n")
    assert run("maxent", path, "--out-dir", str(tmp_path), "--quiet") == 3


def test_analyze(tmp_path):
    eq = write(tmp_path, "eq.toml", "[problem]\nprobabilities = [0.5, 0.5]\n")
    assert run("analyze", eq, str(DEMO), str(CONFIGS / "phase_oscillator.toml"),
               "--out-dir", str(tmp_path), "--quiet", "--jobs", "2") == 0
    zero = json.loads((tmp_path / "eq.analyze.json").read_text())
    assert zero["dod"] == 0 and zero["d_sea"] == 0 and abs(zero["kl"]) < 1e-15
    demo = json.loads((tmp_path / "demo_two_state.analyze.json").read_text())
    assert all(demo[k] > 0 for k in ("dod", "affinity_norm_sq", "d_sea", "kl"))
    grid = json.loads((tmp_path / "phase_oscillator.analyze.json").read_text())
    assert grid["dod"] > 0 and len(grid["phase"]["q"]) == 24 * 24


def test_atomic_write_leaves_no_temp(tmp_path):
    target = tmp_path / "x.json"
    cli.atomic_write(str(target), "{}\n")
    assert target.read_text() == "{}\n"
    assert os.listdir(tmp_path) == ["x.json"]


def test_log_level_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SEA_LOG_LEVEL", "debug")
    run("simulate", str(DEMO), "--out-dir", str(tmp_path))
    assert "DEBUG" in capsys.readouterr().err


def test_targets_rejected_for_simulate(tmp_path, capsys):
    path = write(tmp_path, "t.toml", "[problem]\nprobabilities = [0.2, 0.3, 0.5]\n"
                 "constraints = [[0.0, 1.0, 2.0]]\ntargets = [0.4]\n")
    assert run("simulate", path, "--out-dir", str(tmp_path)) == 2
    assert "problem.targets" in capsys.readouterr().err
