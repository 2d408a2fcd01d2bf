import csv
import json

import numpy as np
import pytest

from nbundle.cli import parse_grid, run
from nbundle.model import resonance_dressed, resonance_ladder


def read_csv(path):
    lines = [l for l in path.read_text(encoding="utf-8").splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def header(path):
    return [l for l in path.read_text(encoding="utf-8").splitlines() if l.startswith("#")]


def rerun_identical(out, tmp_path, name):
    manifest = json.loads((out / "run_manifest.json").read_text())
    again = tmp_path / f"{name}_again"
    assert run([manifest["command"], "--config", str(out / "run_manifest.json"),
                "--out", str(again)]) == 0
    for fname, digest in manifest["outputs"].items():
        assert (again / fname).read_bytes() == (out / fname).read_bytes(), fname
    return again


def test_parse_grid():
    assert parse_grid("1,2.5") == [1.0, 2.5]
    assert parse_grid("0:1:3") == {"start": 0.0, "stop": 1.0, "num": 3, "spacing": "lin"}
    assert parse_grid("1:100:3:log")["spacing"] == "log"


def test_resonances(tmp_path):
    out = tmp_path / "res"
    assert run(["resonances", "--N-values", "1,2,3,4,5", "--omega-grid", "0,4,32",
                "--out", str(out)]) == 0
    rows = read_csv(out / "resonances.csv")
    assert list(rows[0]) == ["N", "omega", "eq1_detuning", "eq2_detuning"]
    assert len(rows) == 15
    zero = [float(r["eq1_detuning"]) for r in rows if float(r["omega"]) == 0.0]
    assert all(a > b > 0 for a, b in zip(zero, zero[1:]))
    assert zero[0] == pytest.approx(resonance_ladder(1))
    eq2 = [float(r["eq2_detuning"]) for r in rows if r["N"] == "2"]
    assert eq2 == sorted(eq2) and eq2[-1] == pytest.approx(resonance_dressed(2, 32.0))
    eq1 = {r["eq1_detuning"] for r in rows if r["N"] == "2"}
    assert len(eq1) == 1
    assert any(l.startswith("# delta=") for l in header(out / "resonances.csv"))
    rerun_identical(out, tmp_path, "res")


def test_resonances_bad_N(tmp_path, capsys):
    assert run(["resonances", "--N-values", "0,2", "--out", str(tmp_path / "x")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "error" and err["error"] == "ValueError"


def test_scan_rows_and_peak(tmp_path):
    out = tmp_path / "scan"
    assert run(["scan", "--omega-grid", "0.01,4", "--omega-L-grid", "19:21.5:11",
                "--out", str(out)]) == 0
    rows = read_csv(out / "scan.csv")
    assert len(rows) == 22
    assert list(rows[0])[:5] == ["omega", "omega_L_detuning", "status", "n_a", "n_sigma"]
    slice4 = [r for r in rows if float(r["omega"]) == 4.0]
    best = max(slice4, key=lambda r: float(r["g2"]))
    assert abs(float(best["omega_L_detuning"]) - resonance_dressed(2, 4.0)) < 0.3
    rerun_identical(out, tmp_path, "scan")


def test_scan_isolates_failures(monkeypatch):
    from nbundle import sweeps
    from nbundle.model import SystemParams
    from nbundle.steady import NonUniqueSteadyState
    real = sweeps.observables

    def flaky(params, space, orders):
        if params.omega == 1.0:
            raise NonUniqueSteadyState("singular")
        return real(params, space, orders)

    monkeypatch.setattr(sweeps, "observables", flaky)
    rows = sweeps.scan(SystemParams(), [0.5, 1.0, 2.0], [20.0], n_max=6)
    assert [r["status"].split(":")[0] for r in rows] == ["ok", "error", "ok"]
    assert "NonUniqueSteadyState" in rows[1]["status"]


def test_sweep_cn_with_physical_rates(tmp_path):
    out = tmp_path / "sweep"
    assert run(["sweep-cn", "--omega-grid", "24,32", "--target-bundles", "200", "--g-hz", "1e9",
                "--out", str(out), "--workers", "2"]) == 0
    rows = read_csv(out / "sweep_cn.csv")
    assert [r["status"] for r in rows] == ["ok", "ok"]
    for r in rows:
        assert float(r["rate_cps"]) == pytest.approx(float(r["lambdaN"]) * 1e9)
        assert 0.8 < float(r["purity"]) <= 1.0
    again = rerun_identical(out, tmp_path, "sweep")
    assert json.loads((again / "run_manifest.json").read_text())["config"]["workers"] == 2


def test_trajectory_and_analyze(tmp_path):
    out = tmp_path / "traj"
    assert run(["trajectory", "--omega", "32.96", "--target-bundles", "300", "--snapshot",
                "--figures", "--out", str(out)]) == 0
    for name in ("clicks.csv", "bundles.csv", "histogram.csv", "rates.csv", "correlations.csv",
                 "counting.csv", "snapshot.csv", "clicks.png", "correlations.png"):
        assert (out / name).exists(), name
    rates = read_csv(out / "rates.csv")[0]
    assert float(rates["fraction_in_N"]) > 0.9
    corr = read_csv(out / "correlations.csv")
    assert {"tau", "g2_N2_regression", "g2_N2_clicks", "g2_N1_clicks"} <= set(corr[0])
    rerun_identical(out, tmp_path, "traj")

    ana = tmp_path / "ana"
    assert run(["analyze", "--record", str(out / "clicks.csv"), "--out", str(ana)]) == 0
    for name in ("bundles.csv", "rates.csv", "correlations.csv"):
        assert (ana / name).read_text().split("\n# command")[0] != ""
    assert read_csv(ana / "rates.csv") == read_csv(out / "rates.csv")


def test_manifest_command_mismatch(tmp_path):
    out = tmp_path / "r"
    run(["resonances", "--out", str(out)])
    assert run(["scan", "--config", str(out / "run_manifest.json"), "--out", str(tmp_path / "s")]) == 1


def test_yaml_config_and_flag_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("N_values: [2]\nomega_grid: [1.0, 2.0]\ndelta: -30.0\n")
    out = tmp_path / "y"
    assert run(["resonances", "--config", str(cfg), "--delta", "-60", "--out", str(out)]) == 0
    rows = read_csv(out / "resonances.csv")
    assert len(rows) == 2
    assert float(rows[0]["eq1_detuning"]) == pytest.approx(resonance_ladder(2, 1.0, -60.0))


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("gamma: 0.1\n")
    assert run(["resonances", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 1
