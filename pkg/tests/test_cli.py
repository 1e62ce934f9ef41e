import csv
import json

import numpy as np
import pytest

from sonopt.cli import main, parse_grid
from sonopt.scenario import load_scenario


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


@pytest.fixture
def t2_file(tmp_path, capsys):
    path = tmp_path / "t2.json"
    assert _run(capsys, "generate", "--fixture", "t2", "--out", path)[0] == 0
    return path


def test_generate_defaults(tmp_path, capsys):
    path = tmp_path / "s.json"
    code, out = _run(capsys, "generate", "--users-per-bs", 2, "--out", path)
    info = json.loads(out)
    assert code == 0
    assert info["n_bs"] == 45 and info["p_max_per_bs_dbm"] == 46.0 and info["sinr_threshold_db"] == -6.5


def test_generate_minimal_and_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert _run(capsys, "generate", "--sites", 1, "--users-per-bs", 1, "--seed", 9, "--out", p)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert load_scenario(a).n_bs == 3


def test_optimize_t2(t2_file, tmp_path, capsys):
    sol, trace = tmp_path / "sol.json", tmp_path / "trace.csv"
    code, out = _run(capsys, "optimize", "--scenario", t2_file, "--out", sol, "--trace", trace,
                     "--dump", tmp_path / "dump")
    assert code == 0
    assert json.loads(sol.read_text())["level"] == pytest.approx(5.0)
    assert trace.read_text().splitlines()[0] == "t,residual,level"
    assert np.allclose(np.loadtxt(tmp_path / "dump" / "V_uplink.csv", delimiter=","), [[1, 0.1], [0.1, 1]])


def test_mu_one_is_capacity_run(t2_file, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    _run(capsys, "optimize", "--scenario", t2_file, "--out", a)
    _run(capsys, "optimize", "--scenario", t2_file, "--out", b, "--mu", 1)
    assert a.read_text() == b.read_text()


def test_optimize_both_directions(t2_file, tmp_path, capsys):
    sol = tmp_path / "sol.json"
    code, out = _run(capsys, "optimize", "--scenario", t2_file, "--out", sol, "--direction", "both")
    report = json.loads(out)
    assert code == 0
    assert report["downlink_solution"]["rho_dl"] == pytest.approx(0.2)
    assert report["downlink_solution"]["rho_ul"] == pytest.approx(0.2)
    assert (tmp_path / "sol_downlink.json").exists()


@pytest.mark.parametrize("argv", [
    ["optimize", "--scenario", "x.json", "--out", "y.json", "--mu", "1.5"],
    ["optimize", "--out", "y.json"],
    ["sweep-mu", "--scenario", "x.json", "--grid", "1:0:0.1"],
    ["generate", "--sites", "0", "--out", "x.json"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_missing_scenario_is_validation_error(tmp_path, capsys):
    assert main(["optimize", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o.json")]) == 3


def test_parse_grid():
    assert parse_grid("0:0.25:1") == pytest.approx([0, 0.25, 0.5, 0.75, 1.0])
    assert parse_grid("0.3,1") == pytest.approx([0.3, 1.0])


def test_sweep(t2_file, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert _run(capsys, "sweep-mu", "--scenario", t2_file, "--grid", "0:0.5:1", "--out", out)[0] == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["mu", "min_sinr_db", "mean_sinr_db", "level"]
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.5, 1.0]
    assert all(float(r[3]) == pytest.approx(5.0) for r in rows[1:])


def test_verify_t2(t2_file, tmp_path, capsys):
    sol = tmp_path / "sol.json"
    _run(capsys, "optimize", "--scenario", t2_file, "--out", sol)
    code, out = _run(capsys, "verify", "--scenario", t2_file, "--solution", sol)
    assert code == 0 and json.loads(out)["pass"]


def test_verify_ensemble_duality(capsys):
    code, out = _run(capsys, "verify", "--ensemble", 5, "--seed", 2)
    report = json.loads(out)
    assert code == 0
    gaps = [c["gap"] for c in report["checks"] if c["name"] == "duality_gap"]
    assert len(gaps) == 6 and max(gaps) <= 1e-9


def test_verify_corrupted_solution(t2_file, tmp_path, capsys):
    sol = tmp_path / "sol.json"
    _run(capsys, "optimize", "--scenario", t2_file, "--out", sol)
    doc = json.loads(sol.read_text())
    doc["b"] = [0, 9]
    sol.write_text(json.dumps(doc))
    assert _run(capsys, "verify", "--scenario", t2_file, "--solution", sol)[0] == 3


def test_module_entry_point_exit_code(tmp_path):
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "sonopt", "optimize", "--scenario", "x.json", "--out", "y.json",
                          "--mu", "2"], capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 1 and "mu must lie" in res.stderr
