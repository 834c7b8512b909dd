import json
import subprocess
import sys

import pytest

from miscible_fem import cli
from miscible_fem.cli import EXIT_NUMERICAL, main
from miscible_fem.sparse import SolverError
from miscible_fem.timestep import TimeStepError


def test_rate_prints_value(capsys):
    assert main(["rate", "--errors", "4,1", "--hs", "2,1"]) == 0
    assert capsys.readouterr().out.strip() == "2.0"


def test_rate_undefined_is_usage_error(capsys):
    assert main(["rate", "--errors", "4,0", "--hs", "2,1"]) == 1
    assert "undefined" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert main(["ex53"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "invalid choice" in err


def test_missing_subcommand(capsys):
    assert main([]) == 1
    assert "usage:" in capsys.readouterr().err


def test_bad_flag_value(capsys):
    assert main(["ex51", "--mesh-levels", "4,x"]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "subcommand" in capsys.readouterr().out


def test_mesh_stats(capsys, tmp_path):
    out = tmp_path / "m.txt"
    assert main(["mesh", "--domain", "disk", "-M", "16", "--output", str(out)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["domain"] == "disk" and stats["boundary_edges"] == 16
    assert out.exists()
    assert main(["mesh", "-M", "0"]) == 1


def test_ex51_from_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "ex51", "mesh_levels": [4, 8, 16, 32],
                               "final_time": 0.25, "output": str(tmp_path / "ex51.csv")}))
    assert main(["ex51", "--config", str(cfg)]) == 0
    csv = (tmp_path / "ex51.csv").read_text()
    lines = csv.splitlines()
    assert lines[0] == "h,diff_Linf,rate" and len(lines) == 4
    assert capsys.readouterr().out == csv
    summary = json.loads((tmp_path / "ex51.json").read_text())
    assert summary["mesh_levels"] == [4, 8, 16, 32]


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "ex51", "mesh_levels": [4, 8, 16, 32],
                               "final_time": 0.25}))
    out = tmp_path / "o.csv"
    assert main(["ex51", "--config", str(cfg), "--mesh-levels", "2,4,8",
                 "--output", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3


def test_config_for_other_experiment(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "ex52"}))
    assert main(["ex51", "--config", str(cfg)]) == 1
    assert "not 'ex51'" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["ex51", "--config", str(tmp_path / "nope.json")]) == 1


def test_dt_not_dividing_final_time_is_usage_error(tmp_path):
    assert main(["ex52", "--mesh-levels", "8,12,16", "--dt", "0.3", "--final-time", "1",
                 "--output", str(tmp_path / "x.csv")]) == 1


@pytest.mark.parametrize("exc", [SolverError("stalled"), TimeStepError("step 3 failed")])
def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch, exc):
    def fail(config, progress=None):
        raise exc
    monkeypatch.setattr(cli, "run_convergence", fail)
    assert main(["ex51", "--output", str(tmp_path / "x.csv")]) == EXIT_NUMERICAL == 2
    assert "numerical failure" in capsys.readouterr().err


def test_tensor_probe_cli(tmp_path, capsys):
    out = tmp_path / "probe.csv"
    assert main(["tensor-probe", "--eps", "0.1,0.05,0.025", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "eps,first_diff_max,second_diff_max" and len(lines) == 4
    assert main(["tensor-probe", "--eps", "0.1,0.2", "--output", str(out)]) == 1


def test_projection_lab_cli(tmp_path):
    out = tmp_path / "lab.csv"
    assert main(["projection-lab", "--mesh-levels", "4,8,16", "--final-time", "0.125",
                 "--p", "2", "--q", "2", "--output", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "miscible_fem", "rate", "--errors",
                           "3.411e-4,8.975e-5", "--hs", "0.03125,0.015625"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.strip() == "1.9262"
    proc = subprocess.run([sys.executable, "-m", "miscible_fem", "frobnicate"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 1 and "usage" in proc.stderr
