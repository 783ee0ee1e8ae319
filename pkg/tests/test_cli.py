import json

import pytest

from mhdpress.cli import main
from mhdpress.io import read_vtk


def test_solve_nonlinear_writes_outputs(tmp_path):
    code = main(["solve", "--builtin", "cube:2", "--solver", "nonlinear", "--amplitude", "0.1",
                 "--out", str(tmp_path)])
    assert code == 0
    for name in ("u", "b", "P", "chi"):
        assert name in read_vtk(tmp_path / f"{name}.vtk").point_data
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["solver"] == "nonlinear" and rep["report"]["iterations"] >= 1


def test_kernel_writes_flux_matrix(tmp_path):
    assert main(["solve", "--builtin", "hollow-box:2:1", "--solver", "kernel", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "flux_matrix.csv").read_text().splitlines()
    assert lines[0] == "i,gamma_1" and len(lines) == 2
    assert "q1" in read_vtk(tmp_path / "q.vtk").point_data


def test_dual_exports(tmp_path):
    assert main(["solve", "--solver", "dual", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["duality"]["relative_gap"] <= 1e-6
    assert (tmp_path / "tau.vtk").exists()


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"solver = stokes\nout = {tmp_path / 'a'}\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "report.json").exists()
    assert not (tmp_path / "a").exists()


def test_data_file_round_trip(tmp_path):
    assert main(["solve", "--solver", "stokes", "--out", str(tmp_path / "first")]) == 0
    # reuse a written grid as a data file: its point arrays are ignored unless named f/g/h/P0
    assert main(["solve", "--solver", "stokes", "--data", str(tmp_path / "first" / "u.vtk"),
                 "--out", str(tmp_path / "second")]) == 0


@pytest.mark.parametrize("argv", [
    ["solve", "--mesh", "/nonexistent/mesh.msh"],
    ["solve", "--case", "nope"],
    ["solve", "--degree", "1", "--damping", "2"],
    ["rates", "--levels", "1"],
])
def test_configuration_errors_exit_one(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path)]) == 1


def test_usage_error_exits_one(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["solve", "--no-such-flag"])
    assert info.value.code == 1


def test_corrupt_mesh_exits_one(tmp_path):
    bad = tmp_path / "bad.msh"
    bad.write_text("garbage\n")
    assert main(["solve", "--mesh", str(bad), "--out", str(tmp_path)]) == 1


def test_solver_failure_exits_two(tmp_path):
    argv = ["solve", "--solver", "nonlinear", "--max-iters", "1", "--tol", "1e-15", "--out", str(tmp_path)]
    assert main(argv) == 2


def test_verify_filter(tmp_path, capsys):
    assert main(["verify", "--filter", "harmonic", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out
    assert json.loads((tmp_path / "verify.json").read_text())["passed"]


def test_rates(tmp_path):
    assert main(["rates", "--solver", "stokes", "--levels", "2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "rates_stokes.csv").exists()
