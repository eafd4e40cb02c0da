import dataclasses
import json
import math

import pytest

from bergerflow.__main__ import main, parse_args
from bergerflow.command import COMMANDS
from bergerflow.command_impl import _sweep_one, convergence_orders, series_checks, summary_checks

from .conftest import linear_series

CONFIG = """\
[run]
schema = 1
tag = test
[grid]
nodes = 65
[stepping]
max_steps = 60
[output]
stride = 5
checkpoint_every = 4
[soliton]
nodes = 257
"""


@pytest.fixture(name="config")
def fixture_config(tmp_path):
    path = tmp_path / "bergerflow.ini"
    path.write_text(CONFIG)
    return path


def test_commands_registered():
    assert set(COMMANDS) == {"validate", "run", "soliton", "blowup", "twin", "report", "sweep"}


def test_parse_args():
    args = parse_args(["--grid", "65,129", "sweep"])
    assert args.grid == [65, 129]
    assert args.command == "sweep"
    assert args.func is COMMANDS["sweep"].func


def test_parse_args_invalid_grid():
    with pytest.raises(SystemExit):
        parse_args(["--grid", "many", "validate"])


def test_validate(config, capfd):
    assert main(["--config", str(config), "validate"]) == 0
    out = capfd.readouterr().out
    assert "A² 4.0" in out
    assert out.count("PASS") == 5


def test_validate_kahler_seed(tmp_path, capfd):
    path = tmp_path / "kahler.ini"
    path.write_text(CONFIG + "[seed]\nphi_shape = constant\nepsilon = 0.0\n")
    assert main(["--config", str(path), "validate"]) == 0
    assert "FAIL" not in capfd.readouterr().out


def test_validate_multiple_grids(config, capfd):
    assert main(["--config", str(config), "--grid", "65,129", "validate"]) == 1
    assert "ValueError: --grid takes a single" in capfd.readouterr().err


def test_invalid_config(tmp_path, capfd):
    path = tmp_path / "bad.ini"
    path.write_text("[run]\nschema = 1\n[seed]\nalpha = 1.2\ndelta = 1.0\n")
    assert main(["--config", str(path), "validate"]) == 2
    err = capfd.readouterr().err
    assert err.startswith("ConfigError: Invalid configuration:")
    assert "α² + δ² ≤ A²/2" in err


def test_missing_config(tmp_path, capfd):
    assert main(["--config", str(tmp_path / "missing.ini"), "validate"]) == 2
    assert "FileNotFoundError" in capfd.readouterr().err


def test_run_resume_report(config, tmp_path, capfd):
    out = tmp_path / "out"
    assert main(["--config", str(config), "--out", str(out), "run"]) == 0
    assert "max_steps" in capfd.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"]
    assert {"series.csv", "trajectory.json", "config.ini"} <= set(manifest["files"])
    assert (out / "checkpoint.json").is_file()

    resumed = tmp_path / "resumed"
    argv = ["--config", str(config), "--out", str(resumed), "--resume", str(out / "checkpoint.json")]
    assert main([*argv, "run"]) == 0
    assert (resumed / "series.csv").read_bytes() == (out / "series.csv").read_bytes()

    assert main(["--config", str(config), "--out", str(out), "report"]) == 0
    checks = json.loads((out / "report.json").read_text())
    names = {c["name"] for c in checks}
    assert {"ψ ≤ 0", "|g_s| ≤ 1", "threshold nondecreasing", "μ at s_-"} <= names
    assert all(c["ok"] for c in checks if c["name"] in {"ψ ≤ 0", "|g_s| ≤ 1"})
    assert "report.json" in json.loads((out / "manifest.json").read_text())["files"]

    # too few snapshots for a blow-up sequence of the short run
    assert main(["--config", str(config), "--out", str(out), "blowup"]) == 1
    assert "ExtractionError" in capfd.readouterr().err


def test_soliton(config, tmp_path, capfd):
    out = tmp_path / "out"
    assert main(["--config", str(config), "--out", str(out), "soliton"]) in {0, 1}
    assert "ode1" in capfd.readouterr().out
    data = json.loads((out / "soliton.json").read_text())
    assert data["checks"]["ode1"]["ok"]
    assert data["checks"]["phi(r*) = 2"]["ok"]
    assert len(data["phi"]) == 257
    assert "soliton.json" in json.loads((out / "manifest.json").read_text())["files"]


@pytest.mark.parametrize("deviation,code", ((1e-4, 0), (0.5, 1)))
def test_report_twin_gate(config, tmp_path, deviation, code):
    out = tmp_path / "out"
    out.mkdir()
    (out / "twin.json").write_text(json.dumps({"node_count": 65, "max_deviation": deviation}))
    assert main(["--config", str(config), "--out", str(out), "--strict", "report"]) == code
    checks = json.loads((out / "report.json").read_text())
    assert checks == [
        {"name": "twin deviation", "ok": not code, "value": deviation, "gate": True}
    ]


def test_sweep_uses_kahler_seed(config):
    row = _sweep_one(config.read_text(), 65)
    assert row["nodes"] == 65
    assert row["F_mu_max"] <= 1e-3


def test_report_empty(config, tmp_path, caplog):
    out = tmp_path / "empty"
    assert main(["--config", str(config), "--out", str(out), "--strict", "report"]) == 0
    assert json.loads((out / "report.json").read_text()) == []
    assert "No artifacts" in caplog.text


def test_series_checks():
    checks = series_checks(linear_series(-4.0), 0.5, 1 / 64)
    assert len(checks) == 11
    assert all(c.ok for c in checks)
    assert [c.name for c in checks if not c.gate] == ["R_min above initial"]


def test_series_checks_violation():
    series = linear_series(-4.0)
    series[5] = dataclasses.replace(series[5], psi_max=0.5)
    failed = [c.name for c in series_checks(series, 0.5, 1 / 64) if not c.ok]
    assert failed == ["ψ ≤ 0"]


def test_summary_checks():
    summary = {
        "fit": {"residual": 0.001, "slope_ok": True, "slope": -4.1},
        "type1": {"tail_max": 3.0, "tail_min": 0.3, "mu2_limit": 13.0},
    }
    res = {c.name: c.ok for c in summary_checks(summary)}
    assert res == {
        "μ² fit residual ≤ 1%": True,
        "μ² slope in window": True,
        "Type-I ratio ≤ 50": True,
        "Type-I ratio ≥ 0.25": True,
        "μ²/(T-t) limit": False,
    }
    assert summary_checks({"fit": None, "type1": None}) == []


def test_convergence_orders():
    rows = [
        {"h": 0.02, "F_mu_max": 4e-4},
        {"h": 0.01, "F_mu_max": 1e-4},
        {"h": 0.005, "F_mu_max": 2.5e-5},
    ]
    orders = convergence_orders(rows)
    assert math.isnan(orders[0])
    assert orders[1:] == pytest.approx([2.0, 2.0])


@pytest.mark.slow
def test_sweep(config, tmp_path):
    config.write_text(CONFIG.replace("max_steps = 60", "max_steps = 0"))
    out = tmp_path / "sweep"
    argv = ["--config", str(config), "--out", str(out), "--grid", "129,65,257", "sweep"]
    assert main(argv) == 0
    rows = json.loads((out / "sweep.json").read_text())
    assert [r["nodes"] for r in rows] == [65, 129, 257]
    assert all(r["order"] >= 1.8 for r in rows[1:])
