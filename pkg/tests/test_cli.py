import json
import subprocess
import sys

import pytest

RUN = [sys.executable, "-m", "dehnfill.cli"]


def run_cli(args, **kw):
    return subprocess.run(RUN + args, capture_output=True, text=True, **kw)


def test_curvature_single_row(tmp_path):
    out = tmp_path / "curv.csv"
    res = run_cli(["curvature", "--n", "4", "--r", "2", "2", "1",
                   "--out", str(out)])
    assert res.returncode == 0
    lines = out.read_text().strip().splitlines()
    header = [l for l in lines if not l.startswith("#")][0]
    assert header == "r,K12,K1i,Kij,V,Vp"
    row = [float(x) for x in lines[-1].split(",")]
    assert row == [2.0, -0.75, -1.125, -0.75, 3.0, 4.5]
    assert any(l.startswith("# n=4") for l in lines)


def test_curvature_hyperbolic_rows():
    res = run_cli(["curvature", "--n", "3", "--r", "1.5", "8", "5"])
    assert res.returncode == 0
    rows = [l for l in res.stdout.strip().splitlines()
            if not l.startswith("#") and not l.startswith("r,")]
    for row in rows:
        vals = [float(x) for x in row.split(",")]
        assert vals[1] == pytest.approx(-1.0)
        assert vals[2] == pytest.approx(-1.0)


def test_curvature_empty_range_exits_2():
    res = run_cli(["curvature", "--n", "4", "--r", "5", "2", "10"])
    assert res.returncode == 2
    assert "configuration error" in res.stderr


def test_kernel_json():
    res = run_cli(["kernel", "--n", "5"])
    assert res.returncode == 0
    doc = json.loads(res.stdout)
    assert doc["dimension"] == 9
    assert doc["strict_dimension"] == 0
    assert doc["format_version"] == 1
    assert doc["config"]["n"] == 5
    assert "I" in doc["exponents"]


def test_glue_and_solve_roundtrip(tmp_path):
    out = tmp_path / "prof.csv"
    res = run_cli(["glue", "--n", "3", "--ell", "10", "--nodes", "128",
                   "--out", str(out)])
    assert res.returncode == 0
    text = out.read_text()
    assert text.splitlines()[0] == "# format_version=1"
    assert "s,r,f2,f3" in text

    res = run_cli(["solve", "--n", "3", "--ell", "10", "--nodes", "256",
                   "--tol", "1e-8"])
    assert res.returncode == 0
    doc = json.loads(res.stdout)
    assert doc["converged"] is True
    assert doc["final_max_residual"] < 1e-8
    assert doc["iterations"] <= 8


def test_sweep_slope_field():
    res = run_cli(["sweep", "--n", "3", "--R", "6,12,24"])
    assert res.returncode == 0
    slope_line = [l for l in res.stdout.splitlines() if l.startswith("# slope=")][0]
    slope = float(slope_line.split("=")[1])
    assert -2.2 < slope < -1.8


def test_estimate_deterministic():
    a = run_cli(["estimate", "--n", "4", "--R", "16", "--alpha", "0.5",
                 "--trials", "5", "--seed", "11", "--nodes", "256"])
    b = run_cli(["estimate", "--n", "4", "--R", "16", "--alpha", "0.5",
                 "--trials", "5", "--seed", "11", "--nodes", "256"])
    assert a.returncode == b.returncode == 0
    assert a.stdout == b.stdout
    doc = json.loads(a.stdout)
    assert doc["fitted_constant"] > 0


def test_norms_output():
    res = run_cli(["norms", "--n", "4", "--R", "64", "--nodes", "400",
                   "--seed", "3"])
    assert res.returncode == 0
    doc = json.loads(res.stdout)
    assert doc["double_star"] <= doc["star"] + 1e-12
    assert len(doc["u_matrix"]) == 3


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 5\n\n# comment\n")
    res = run_cli(["kernel", "--config", str(cfg)])
    assert res.returncode == 0
    assert json.loads(res.stdout)["dimension"] == 9
    res = run_cli(["kernel", "--config", str(cfg), "--n", "4"])
    assert json.loads(res.stdout)["dimension"] == 5   # flag wins


def test_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("wibble = 3\n")
    res = run_cli(["kernel", "--config", str(cfg), "--n", "4"])
    assert res.returncode == 2
    assert "unknown key" in res.stderr


def test_missing_required_option_exits_2():
    res = run_cli(["glue", "--n", "3"])
    assert res.returncode == 2


def test_byte_identical_outputs(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        res = run_cli(["glue", "--n", "4", "--ell", "30", "--nodes", "128",
                       "--out", str(path)])
        assert res.returncode == 0
    assert a.read_bytes() == b.read_bytes()


def test_residual_field_csv(tmp_path):
    out = tmp_path / "res.csv"
    res = run_cli(["glue", "--n", "3", "--ell", "10", "--nodes", "128",
                   "--out", str(tmp_path / "p.csv"), "--residuals", str(out)])
    assert res.returncode == 0
    lines = out.read_text().splitlines()
    header = [l for l in lines if not l.startswith("#")][0]
    assert header == "s,r,E1_22,E1_33,E2"


def test_solve_json_deterministic():
    args = ["solve", "--n", "3", "--ell", "10", "--nodes", "128", "--tol", "1e-7"]
    a, b = run_cli(args), run_cli(args)
    assert a.returncode == b.returncode == 0
    assert a.stdout == b.stdout


def test_sweep_json_format():
    res = run_cli(["sweep", "--n", "3", "--R", "6,12,24", "--format", "json"])
    assert res.returncode == 0
    doc = json.loads(res.stdout)
    assert len(doc["R"]) == 3
    assert -2.2 < doc["slope"] < -1.8
