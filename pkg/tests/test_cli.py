from __future__ import annotations

import csv
import hashlib
import json
import math
import subprocess
import sys

import pytest

from weakbound import __version__
from weakbound.cli import main

BUMP = {"geometry": {"n": 2, "d": math.pi}, "profile": {"kind": "poly_bump", "b": 1, "p": 3}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _run(tmp_path, task, cfg, *extra, out="out"):
    od = tmp_path / out
    code = main([task, "--config", _write(tmp_path, cfg, f"{out}.json"), "--out", str(od), *extra])
    return code, od


def test_asymptotics_artifacts(tmp_path):
    code, od = _run(tmp_path, "asymptotics", {**BUMP, "lambdas": [0.01, 0.05]})
    assert code == 0
    data = json.loads((od / "asymptotics.json").read_text())
    assert data["m1"] == pytest.approx(32 / 35, rel=1e-10)
    assert {"m1", "m2", "m2_terms", "K", "tail_bound", "predictions"} <= set(data)
    assert [p["lambda"] for p in data["predictions"]] == [0.01, 0.05]
    rows = list(csv.DictReader((od / "predictions.csv").open()))
    assert len(rows) == 2 and rows[0]["exists"] == "True"
    man = json.loads((od / "manifest.json").read_text())
    assert man["status"] == "ok" and man["version"] == __version__
    assert man["config"]["lambdas"] == [0.01, 0.05]
    for a in man["artifacts"]:
        assert hashlib.sha256((od / a["file"]).read_bytes()).hexdigest() == a["sha256"]
    assert {a["file"] for a in man["artifacts"]} == {"asymptotics.json", "predictions.csv"}


def test_artifacts_are_deterministic(tmp_path):
    cfg = {**BUMP, "lambdas": [0.05, 0.01], "K": 50}
    _, a = _run(tmp_path, "asymptotics", cfg, out="a")
    _, b = _run(tmp_path, "asymptotics", cfg, out="b")
    for name in ("asymptotics.json", "predictions.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_output_formats(tmp_path):
    code, od = _run(tmp_path, "asymptotics", {**BUMP, "lambdas": [0.05], "output": {"formats": ["json"]}})
    assert code == 0 and not (od / "predictions.csv").exists()


def test_output_directory_from_config(tmp_path):
    od = tmp_path / "from_config"
    cfg = _write(tmp_path, {**BUMP, "lambdas": [0.05], "output": {"directory": str(od)}})
    assert main(["asymptotics", "--config", cfg]) == 0
    assert (od / "manifest.json").exists()


def test_tolerance_override_reaches_the_run(tmp_path):
    code, od = _run(tmp_path, "asymptotics", {**BUMP, "lambdas": [0.05]}, "--tolerance", "tail=1e-6")
    assert code == 0
    data = json.loads((od / "asymptotics.json").read_text())
    assert data["flagged"]
    assert json.loads((od / "manifest.json").read_text())["config"]["tolerances"]["tail"] == 1e-6


@pytest.mark.parametrize("cfg,field", [
    ({**BUMP, "lambdas": []}, "lambdas"),
    ({**BUMP, "lambdas": [0.1], "colour": 1}, "colour"),
    ({"geometry": {"n": 4}, "profile": {"kind": "poly_bump"}, "lambdas": [0.1]}, "geometry.n"),
    ({**BUMP, "lambdas": [0.1, -0.2]}, "lambdas[1]"),
    ({**BUMP, "lambdas": [0.1], "tolerances": {"tail": -1}}, "tolerances.tail"),
    ({**BUMP, "lambdas": [0.1], "profile": {"kind": "gaussian"}}, "profile"),
    ({**BUMP, "lambdas": [0.1], "output": {"formats": ["xml"]}}, "output.formats"),
])
def test_invalid_configs_exit_2(tmp_path, capsys, cfg, field):
    code, _ = _run(tmp_path, "asymptotics", cfg)
    assert code == 2
    assert field in capsys.readouterr().err


def test_empty_sweep_exits_2(tmp_path):
    assert _run(tmp_path, "sweep", {**BUMP, "lambdas": []})[0] == 2


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "geometry": {"n": 2},\n  "lambdas": [0.1,,]\n}')
    assert main(["asymptotics", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_missing_config_and_bad_override(tmp_path, capsys):
    assert main(["asymptotics", "--out", str(tmp_path / "o")]) == 2
    cfg = _write(tmp_path, {**BUMP, "lambdas": [0.1]})
    assert main(["asymptotics", "--config", cfg, "--tolerance", "tail"]) == 2
    assert main(["asymptotics", "--config", cfg, "--tolerance", "speed=1"]) == 2
    assert main(["asymptotics", "--config", str(tmp_path / "nope.json")]) == 2


def test_computation_error_exits_1(tmp_path, capsys):
    code, od = _run(tmp_path, "critical", {**BUMP, "sigma_grid": [1.0, 2.0]})
    assert code == 1
    assert "error [critical.CriticalError]" in capsys.readouterr().err
    assert json.loads((od / "manifest.json").read_text())["status"] == "error"


def test_critical_and_report(tmp_path, capsys):
    cfg = {"geometry": {"n": 2}, "profile": {"kind": "dipole"}, "sigma_grid": [1.0, 2.0, 3.0, 4.0]}
    code, od = _run(tmp_path, "critical", cfg)
    assert code == 0
    data = json.loads((od / "critical.json").read_text())
    assert data["sigma_star"] == pytest.approx(2.6279, abs=1e-3)
    assert data["bound_zeros"][0] <= data["sigma_star"] <= data["bound_zeros"][1]
    capsys.readouterr()
    assert main(["report", str(od)]) == 0
    out = capsys.readouterr().out
    assert ">>> sigma* = 2.62" in out and "verdict" in out
    code, lit = _run(tmp_path, "critical", cfg, "--paper-literal", out="lit")
    assert json.loads((lit / "critical.json").read_text())["paper_literal"] is True


def test_solve_with_matrix_dump(tmp_path):
    cfg = {**BUMP, "lambdas": [0.3], "mesh": {"h": [math.pi / 8]}}
    code, od = _run(tmp_path, "solve", cfg, "--dump-matrices")
    assert code == 0
    rows = json.loads((od / "solve.json").read_text())["results"]
    # the gap is measured from the discrete threshold of the mesh
    assert rows[0]["kind"] == "bound" and rows[0]["gap"] > 0
    files = {a["file"] for a in json.loads((od / "manifest.json").read_text())["artifacts"]}
    assert {"pencil_lambda0.3_stiffness.mtx", "pencil_lambda0.3_mass.mtx", "solve.csv"} <= files


def test_sweep_and_report(tmp_path, capsys):
    cfg = {**BUMP, "lambdas": [0.04, 0.057, 0.08, 0.11, 0.16],
           "mesh": {"h": [math.pi / 8, math.pi / 16, math.pi / 32], "min_margin": math.pi}}
    code, od = _run(tmp_path, "sweep", cfg)
    assert code == 0
    data = json.loads((od / "sweep.json").read_text())
    assert data["fit"]["coefficients"][0] == pytest.approx(32 / 35, rel=0.02)
    assert not data["failed_lambdas"]
    capsys.readouterr()
    assert main(["report", str(od)]) == 0
    table = capsys.readouterr().out.splitlines()
    assert "rel_diff" in table[1] and len(table) == 3 + 5


def test_report_rejects_missing_or_tampered_manifest(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 1
    _, od = _run(tmp_path, "asymptotics", {**BUMP, "lambdas": [0.05]})
    (od / "predictions.csv").write_text("tampered\n")
    assert main(["report", str(od)]) == 1
    assert "hash mismatch" in capsys.readouterr().err


def test_verify_subset_and_report(tmp_path, capsys):
    code, od = _run(tmp_path, "verify", {"criteria": [7, 8]})
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2
    data = json.loads((od / "verify.json").read_text())
    assert [c["id"] for c in data["checks"]] == [7, 8]
    assert main(["report", str(od)]) == 0
    assert "[PASS] 8." in capsys.readouterr().out


def test_kernel_report_flag(capsys):
    assert main(["--kernel-report"]) == 0
    assert "sh_bound" in capsys.readouterr().out


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "weakbound.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and __version__ in r.stdout


def test_demo_configs_validate():
    from pathlib import Path

    from weakbound.cli import load_config

    demos = sorted((Path(__file__).parents[1] / "demos").glob("*.json"))
    assert demos
    for p in demos:
        cfg = json.loads(p.read_text())
        load_config(str(p), cfg["task"])


def test_schema_lists_every_config_key():
    from pathlib import Path

    from weakbound.cli import TOLERANCE_KEYS

    schema = json.loads((Path(__file__).parents[1] / "docs" / "config.schema.json").read_text())
    assert set(schema["properties"]) == {"task", "geometry", "profile", "lambdas", "sigma_grid", "K",
                                         "mesh", "tolerances", "output", "criteria", "quick"}
    assert set(schema["properties"]["tolerances"]["properties"]) == set(TOLERANCE_KEYS)
