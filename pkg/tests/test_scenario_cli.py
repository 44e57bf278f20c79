import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from beltrami_sc.cli import EXIT_INVARIANT, EXIT_OK, EXIT_SCENARIO, EXIT_STAGE, main
from beltrami_sc.render import render_svg
from beltrami_sc.scenario import Scenario, ScenarioError, load_scenario
from beltrami_sc.uniformize import skeleton

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def _write(tmp_path, data, name="scen.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def _run(command, scenario, out):
    return main([command, "--scenario", str(scenario), "--out", str(out)])


@pytest.mark.parametrize("data", [
    {"field": {"kind": "nope"}, "grid": {"L": 1, "m": 2}},
    {"field": {"kind": "zero"}},
    {"field": {"kind": "zero"}, "grid": {"L": -1, "m": 2}},
    {"field": {"kind": "strips", "kappa": 1.0}, "grid": {"L": 1, "m": 2}},
    {"field": {"kind": "zero"}, "grid": {"L": 1, "m": 2}, "outputs": ["nonsense"]},
    {"field": {"kind": "zero"}, "grid": {"L": 1, "m": 2}, "seed": "x"},
    {"field": {"kind": "zero"}, "grid": {"L": 1, "m": 2}, "geodesics": [{"start": [0, 0]}]},
    {"field": {"kind": "zero"}, "grid": {"L": 1, "m": 2}, "transform": "mobius"},
    {"field": {"kind": "zero"}, "grid": {"L": 1, "m": 2}, "solver": {"tol": 0}},
    [1, 2],
])
def test_invalid_scenarios_are_rejected(data):
    with pytest.raises(ScenarioError):
        Scenario.from_json(data)


def test_load_scenario_reports_unreadable_files(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ScenarioError):
        load_scenario(bad)


def test_complex_values_accept_pairs():
    scen = Scenario.from_json({"field": {"kind": "cell", "value": [0, 0.2], "row": 1, "col": 1},
                               "grid": {"L": 1.5, "m": 3}})
    assert scen.piecewise().cell_values[1, 1] == 0.2j


def test_discretize_zero_and_strips(tmp_path):
    assert _run("discretize", SCENARIOS / "zero.json", tmp_path / "z") == EXIT_OK
    data = json.loads((tmp_path / "z" / "field.json").read_text())
    assert np.all(np.asarray(data["values"]) == 0)
    assert _run("discretize", SCENARIOS / "strips.json", tmp_path / "s") == EXIT_OK
    assert (tmp_path / "s" / "field.json").exists()
    assert _run("glue", SCENARIOS / "strips.json", tmp_path / "s") == EXIT_OK
    assert (tmp_path / "s" / "complex.json").exists()


def test_solve_report_of_zero_field(tmp_path):
    assert _run("solve", SCENARIOS / "zero.json", tmp_path) == EXIT_OK
    report = json.loads((tmp_path / "solve_report.json").read_text())
    assert report["iterations"] == 0
    assert report["finalResidual"] < 1e-12
    with open(tmp_path / "poles.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 25
    assert all(float(r["re_res"]) == 0 and float(r["im_res"]) == 0 for r in rows)


def test_triangle_report_lists_the_fixture_residues(tmp_path):
    assert _run("solve", SCENARIOS / "triangle.json", tmp_path) == EXIT_OK
    report = json.loads((tmp_path / "solve_report.json").read_text())
    res = [complex(*r) for r in report["residues"]]
    assert abs(res[0] - (7 / 24 - 1 + np.log(np.sqrt(2)) / (2j * np.pi))) < 1e-12
    assert abs(res[1] - (7 / 24 - 1 - np.log(np.sqrt(2)) / (2j * np.pi))) < 1e-12
    assert _run("eval", SCENARIOS / "triangle.json", tmp_path) == EXIT_SCENARIO


def test_eval_reuses_the_saved_map(tmp_path):
    assert _run("solve", SCENARIOS / "zero.json", tmp_path) == EXIT_OK
    assert _run("eval", SCENARIOS / "zero.json", tmp_path) == EXIT_OK
    vals = np.loadtxt(tmp_path / "probes.csv", delimiter=",", skiprows=1)
    assert vals.shape == (10, 4)
    np.testing.assert_allclose(vals[:, 2:], vals[:, :2], atol=1e-12)


def test_trace_and_transport_outputs(tmp_path):
    scen = SCENARIOS / "single_cell.json"
    assert _run("trace", scen, tmp_path) == EXIT_OK
    assert (tmp_path / "geodesic_0.csv").exists()
    assert _run("transport", scen, tmp_path) == EXIT_OK
    with open(tmp_path / "transport.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows


def test_verify_is_deterministic(tmp_path):
    scen = SCENARIOS / "single_cell.json"
    assert _run("verify", scen, tmp_path / "a") == EXIT_OK
    assert _run("verify", scen, tmp_path / "b") == EXIT_OK
    for name in ("verify.csv", "verify_report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "verify_report.json").read_text())
    assert report["passed"] and "timings" not in report


def test_verify_failure_exits_with_invariant_code(tmp_path):
    # a loose solver tolerance stops well above the verify thresholds
    data = {"field": {"kind": "cell", "value": 0.2, "row": 1, "col": 1}, "grid": {"L": 1.5, "m": 3},
            "solver": {"tol": 1e-3}, "outputs": ["report"]}
    assert _run("verify", _write(tmp_path, data), tmp_path / "out") == EXIT_INVARIANT
    with open(tmp_path / "out" / "verify.csv") as fh:
        failed = {r["check"] for r in csv.DictReader(fh) if r["pass"] == "FAIL"}
    assert "solver_residual" in failed


def test_stalled_solve_exits_with_stage_code(tmp_path):
    data = {"field": {"kind": "cell", "value": 0.2, "row": 1, "col": 1}, "grid": {"L": 1.5, "m": 3},
            "solver": {"maxIter": 1, "continuationSteps": 1}}
    assert _run("solve", _write(tmp_path, data), tmp_path / "out") == EXIT_STAGE


def test_svg_is_valid_and_stable(single_cell_map, tmp_path):
    sk = skeleton(single_cell_map, "evaluate")
    a = render_svg(single_cell_map, sk, title="cell")
    assert a == render_svg(single_cell_map, sk, title="cell")
    root = ET.fromstring(a)
    ns = "{http://www.w3.org/2000/svg}"
    groups = {g.get("id") for g in root.iter(f"{ns}g")}
    assert {"hatching", "skeleton", "poles"} <= groups
    assert len(list(root.iter(f"{ns}circle"))) == len(single_cell_map.symbol)
    assert "-0.0000" not in a


def test_render_command_writes_svg(tmp_path):
    assert _run("render", SCENARIOS / "triangle.json", tmp_path) == EXIT_OK
    ET.parse(tmp_path / "skeleton.svg")


def test_exit_codes(tmp_path):
    assert main(["frobnicate", "--scenario", "x"]) == EXIT_SCENARIO
    assert _run("solve", tmp_path / "missing.json", tmp_path) == EXIT_SCENARIO
    bad = _write(tmp_path, {"field": {"kind": "wavy"}, "grid": {"L": 1, "m": 2}})
    assert _run("solve", bad, tmp_path) == EXIT_SCENARIO
    # a constant field leaves the boundary cells non-zero, which the grid gluing cannot close
    const = _write(tmp_path, {"field": {"kind": "constant", "value": 0.3}, "grid": {"L": 1, "m": 2}}, "c.json")
    assert _run("solve", const, tmp_path) == EXIT_STAGE


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "beltrami_sc", "discretize", "--scenario",
                           str(SCENARIOS / "zero.json"), "--out", str(tmp_path)], capture_output=True)
    assert proc.returncode == 0
    assert (tmp_path / "field.json").exists()
