import csv
import io

import numpy as np
import pytest

from aderdg.cli import main, parse_float_list, parse_int_list
from aderdg.experiments import ConvergenceCase, run_convergence


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_list_parsers():
    assert parse_int_list("1..4") == [1, 2, 3, 4]
    assert parse_int_list("1,3, 5") == [1, 3, 5]
    assert parse_int_list("") == []
    assert parse_float_list("0.05:0.2:0.05") == [0.05, 0.1, 0.15, 0.2]
    assert parse_float_list("0.1,2") == [0.1, 2.0]
    with pytest.raises(ValueError):
        parse_float_list("0:1:0")


def test_cfl_table_strict_n1(capsys):
    code, out, _ = run(capsys, "cfl-table", "--n", "1", "--epsilon", "0")
    assert code == 0
    (row,) = rows(out)
    assert row["N"] == "1" and row["variant"] == "explicit"
    assert abs(float(row["cfl_threshold"]) - 0.333) <= 0.001


@pytest.mark.parametrize(
    "argv",
    [
        ["cfl-table", "--n", ""],
        ["cfl-table", "--n", "12"],
        ["cfl-table", "--variant", "rk4"],
        ["stability-map", "--deltas", "0.6"],
        ["stability-map", "--variant", "explicit"],
        ["convergence", "--scheme", "rk4"],
        ["solve", "--scheme", "explicit", "--n", "11", "--steps", "1"],
        ["solve", "--steps", "1", "--flux", "euler"],
        ["solve", "--initial", "square", "--steps", "1"],
        ["solve"],
        ["scan", "--cfls", "-0.1"],
        ["nonsense"],
        ["scan", "--threads", "0"],
        ["cfl-table", "--config", "/nonexistent/file.cfg"],
    ],
)
def test_usage_errors_exit_2(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2
    assert err.startswith("error:")


def test_numeric_failure_exit_3(capsys):
    code, _, err = run(capsys, "cfl-table", "--n", "1", "--variant", "implicit", "--epsilon", "0",
                       "--theta-samples", "51", "--cfl-points", "8")
    assert code == 3
    assert err.startswith("error:")


def test_stability_map_defaults_n3(capsys):
    code, out, _ = run(capsys, "stability-map", "--n", "3", "--theta-samples", "401")
    assert code == 0
    data = rows(out)
    assert len(data) == 9 * 15
    assert {r["delta"] for r in data} == {f"{d:.17g}" for d in parse_float_list("0.05:0.45:0.05")}
    for r in data:
        if float(r["CFL"]) <= 0.104:
            assert r["verdict"] == "stable", r


def test_stability_map_implicit_all_stable(capsys):
    code, out, _ = run(capsys, "stability-map", "--n", "2", "--variant", "implicit-sliver",
                       "--theta-samples", "201", "--deltas", "0.1,0.25,0.45")
    assert code == 0
    data = rows(out)
    assert len(data) == 3 * 20
    assert all(r["verdict"] == "stable" for r in data)


def test_scan_output(capsys):
    code, out, _ = run(capsys, "scan", "--n", "1", "--cfls", "0.3,0.34")
    assert code == 0
    a, b = rows(out)
    assert float(a["max_rho"]) <= 1 + 1e-12 < float(b["max_rho"])


def test_solve_constant(capsys):
    code, out, _ = run(capsys, "solve", "--initial", "constant", "--n", "2", "--ne", "16", "--steps", "10",
                       "--delta", "0.2", "--velocity", "0.3")
    assert code == 0
    data = rows(out)
    assert len(data) == 11
    assert all(abs(float(r["mass_drift"])) <= 1e-13 for r in data)
    assert float(data[-1]["l2_error"]) <= 1e-12


def test_solve_matches_convergence_row(capsys):
    code, out, _ = run(capsys, "solve", "--n", "3", "--ne", "64", "--final-time", "1")
    assert code == 0
    err = float(rows(out)[-1]["l2_error"])
    rep = run_convergence(ConvergenceCase("explicit", 3, (32, 64)))
    assert err == rep.errors[1]


def test_solve_lagrangian_window(capsys, tmp_path):
    samples = tmp_path / "samples.csv"
    code, out, _ = run(capsys, "solve", "--n", "1", "--ne", "48", "--cfl", str(0.9 * 0.333), "--velocity", "1",
                       "--steps", "100", "--samples", str(samples))
    assert code == 0
    energy = [float(r["energy"]) for r in rows(out)]
    assert max(energy) <= energy[0] * (1 + 1e-10)
    s = rows(samples.read_text())
    assert len(s) == 48 * 2 and all(np.isfinite(float(r["u"])) for r in s)


@pytest.mark.parametrize("scheme,N,delta,target", [("explicit", 2, 0.0, 3.0), ("implicit", 1, 0.2, 2.0)])
def test_convergence_command(capsys, scheme, N, delta, target):
    code, out, _ = run(capsys, "convergence", "--scheme", scheme, "--n", str(N), "--ne", "24,48,96",
                       "--delta", str(delta))
    assert code == 0
    data = rows(out)
    assert data[-1]["scheme"] == scheme + ("-sliver" if delta else "")
    assert abs(float(data[-1]["observed_order"]) - target) <= 0.4


def test_dump_matrices(capsys):
    code, out, _ = run(capsys, "dump-matrices", "--n", "1")
    assert code == 0
    m = {(r["matrix"], r["i"], r["j"]): float(r["value"]) for r in rows(out)}
    assert m[("m", "1", "1")] == pytest.approx(1 / 12, abs=1e-15)
    code, out, _ = run(capsys, "dump-matrices", "--n", "1", "--cfl", "0.3", "--theta", "0")
    A = {(r["matrix"], r["i"], r["j"]): float(r["value"]) for r in rows(out)}
    assert A[("A_real", "0", "0")] == pytest.approx(1.0, abs=1e-14)


def test_output_is_deterministic(capsys, tmp_path):
    argv = ["scan", "--n", "1,2", "--cfls", "0.1,0.2", "--theta-samples", "101"]
    _, first, _ = run(capsys, *argv, "--threads", "1")
    _, second, _ = run(capsys, *argv, "--threads", "1")
    _, threaded, _ = run(capsys, *argv, "--threads", "2")
    assert first == second == threaded
    path = tmp_path / "scan.csv"
    assert main([*argv, "--out", str(path)]) == 0
    assert path.read_text() == first


def test_config_file_and_flag_override(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# scan settings\nn = 2\ncfls = 0.1\ntheta-samples = 101\n")
    _, out, _ = run(capsys, "scan", "--config", str(cfg))
    assert [r["N"] for r in rows(out)] == ["2"]
    _, out, _ = run(capsys, "scan", "--config", str(cfg), "--n", "1")
    assert [r["N"] for r in rows(out)] == ["1"]
    cfg.write_text("bogus = 1\n")
    code, _, err = run(capsys, "scan", "--config", str(cfg))
    assert code == 2 and err.startswith("error:")
