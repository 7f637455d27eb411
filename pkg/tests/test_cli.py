import csv
import json
import subprocess
import sys

import pytest

from helmdual import cli


def run(tmp_path, command, config=None, *extra, name="cfg.json"):
    args = [command, "--out", str(tmp_path / "out"), "--threads", "1"]
    if config is not None:
        path = tmp_path / name
        path.write_text(json.dumps(config))
        args += ["--config", str(path)]
    return cli.main(args + list(extra))


def read_json(path):
    return json.loads(path.read_text())


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_fundsol_table_three_dimensions(tmp_path, capsys):
    assert run(tmp_path, "fundsol-table", {"dimension": 3}) == 0
    rows = read_csv(tmp_path / "out" / "fundsol_N3.csv")
    assert rows[0] == ["r", "psi", "lambda", "diff", "weighted_ratio"]
    ratios = [float(r[4]) for r in rows[1:]]
    assert all(0.0 < q <= (1 + 1e-10) / (8 * 3.141592653589793) for q in ratios)
    cert = read_json(tmp_path / "out" / "bound_certificate_N3.json")
    assert cert["valid"] and "kappa2_hat" in capsys.readouterr().out


def test_fundsol_table_five_dimensions_positive(tmp_path):
    assert run(tmp_path, "fundsol-table", None, "-N", "5") == 0
    rows = read_csv(tmp_path / "out" / "fundsol_N5.csv")
    assert all(float(r[3]) > 0.0 for r in rows[1:])


@pytest.mark.parametrize("command", cli.COMMANDS)
def test_invalid_dimension_exit_code(tmp_path, command):
    assert run(tmp_path, command, {"dimension": 2}) == 2


def test_bad_range_and_unknown_keys(tmp_path, capsys):
    assert run(tmp_path, "fundsol-table", {"dimension": 5, "r_max": 3.0}) == 2
    assert run(tmp_path, "certify-bounds", {"dimension": 4, "bogus": 1}) == 2
    assert run(tmp_path, "gap", {"dimension": 4, "eps_list": [1.0]}) == 2
    assert run(tmp_path, "gap", {"command": "solve"}) == 2
    assert "error" in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path):
    assert cli.main(["sobolev", "--config", str(tmp_path / "none.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["sobolev", "--config", str(bad)]) == 2
    assert cli.main(["nonsense"]) == 2


def test_certify_bounds(tmp_path):
    assert run(tmp_path, "certify-bounds", {"dimension": 4, "r_lo": 1e-4, "r_hi": 0.8}) == 0
    cert = read_json(tmp_path / "out" / "bound_certificate_N4.json")
    assert cert["valid"] and cert["weight_kind"] == "log"


def test_sobolev_prints_value(tmp_path, capsys):
    assert run(tmp_path, "sobolev", None, "-N", "4") == 0
    out = capsys.readouterr().out
    S = float(out.split("S = ")[1].split()[0])
    assert abs(S - (32 * 3.141592653589793**2 / 3) ** 0.5) < 1e-5
    data = read_json(tmp_path / "out" / "sobolev_N4.json")
    assert abs(data["S"] - data["S_gradient_path"]) < 1e-6 * data["S"]


@pytest.mark.parametrize(
    "config,status",
    [
        ({"dimension": 5, "eps_list": [1e-2, 1e-3, 1e-4]}, "gap_certified"),
        ({"dimension": 3, "eps_list": [1e-2, 1e-3]}, "no_gap_equality"),
        ({"dimension": 4, "eps_list": [1e-2, 1e-3], "coefficient": {"kind": "power_bump", "power": 2}}, "gap_certified"),
    ],
)
def test_gap_status(tmp_path, config, status):
    assert run(tmp_path, "gap", config) == 0
    N = config["dimension"]
    data = read_json(tmp_path / "out" / f"gap_certificate_N{N}.json")
    assert data["status"] == status
    assert len(read_csv(tmp_path / "out" / f"gap_scan_N{N}.csv")) == len(config["eps_list"]) + 1


def test_solve_and_checkpoint(tmp_path):
    assert run(tmp_path, "solve", {"dimension": 4}) == 0
    rep = read_json(tmp_path / "out" / "solve_report.json")
    assert rep["status"] == "converged" and rep["energy_identity_gap"] < 1e-5
    assert (tmp_path / "out" / "dual_state.bin").stat().st_size == 8 * read_json(tmp_path / "out" / "dual_state.json")["count"]
    hist = read_csv(tmp_path / "out" / "residual_history.csv")
    assert hist[0] == ["iteration", "relative_residual"] and len(hist) - 1 == rep["iterations"]


def test_solve_zero_init(tmp_path, capsys):
    assert run(tmp_path, "solve", {"dimension": 4, "init": {"kind": "zero"}}) == 2
    assert "zero" in capsys.readouterr().err


def test_solve_not_converged_still_succeeds(tmp_path):
    assert run(tmp_path, "solve", {"dimension": 4, "params": {"max_iter": 2}}) == 0
    assert read_json(tmp_path / "out" / "solve_report.json")["status"] == "not_converged"


def test_nonexist3d(tmp_path):
    assert run(tmp_path, "nonexist3d", {"eps_list": [1e-2, 1e-3], "v1": False}) == 0
    rep = read_json(tmp_path / "out" / "nonexist3d.json")
    assert all(r["form_margin"] > 0 for r in rep["rows"])
    assert run(tmp_path, "nonexist3d", {"dimension": 4}) == 2


def test_farfield(tmp_path):
    assert run(tmp_path, "farfield", {}) == 0
    data = read_json(tmp_path / "out" / "farfield_N3.json")
    assert data["relative_rms"] < 0.05
    assert run(tmp_path, "farfield", {"r_window": [1.0, 40.0]}) == 2


@pytest.mark.parametrize("command", cli.COMMANDS)
def test_dry_run_writes_nothing(tmp_path, command, capsys):
    config = {"dimension": 3 if command in ("nonexist3d", "farfield") else 4}
    assert run(tmp_path, command, config, "--dry-run") == 0
    assert not (tmp_path / "out").exists()
    assert "config ok" in capsys.readouterr().out


def test_outputs_are_deterministic(tmp_path):
    config = {"dimension": 4, "eps_list": [1e-2, 1e-3]}
    for sub in ("a", "b"):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        assert cli.main(["gap", "--config", str(path), "--out", str(tmp_path / sub)]) == 0
        assert cli.main(["fundsol-table", "-N", "6", "--out", str(tmp_path / sub)]) == 0
    for name in ("gap_scan_N4.csv", "gap_certificate_N4.json", "fundsol_N6.csv", "bound_certificate_N6.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "helmdual.cli", "sobolev", "-N", "3", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and proc.stdout.startswith("S = ")
    proc = subprocess.run([sys.executable, "-m", "helmdual.cli", "sobolev", "-N", "9"], capture_output=True, text=True)
    assert proc.returncode == 2
