import csv
import json

import numpy as np
import pytest

import run
from features.analysis.analysis import SLOWEST_MODE, kernel_bounds
from features.kernels.kernels import KernelFamily, control_kernel, inverse_kernel
from features.simulation.simulation import Scenario, SimConfig
from features.verification import verification
from features.verification.verification import (CheckResult, VerificationContext, at_least, at_most,
                                                check_state_feedback)
from utils.csv_io import read_kernel_csv


def write_config(tmp_path, text):
    path = tmp_path / "run.conf"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_spectrum_prints_heat_rate(tmp_path, capsys):
    config = write_config(tmp_path, "lambda1 = 0\nlambda2 = 0\nscenario = open_loop\n")
    assert run.main(["spectrum", "--config", config]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1] == "-2.4674"


def test_complex_spectrum_is_a_usage_error(tmp_path):
    config = write_config(tmp_path, "lambda1 = 5\nlambda2 = -1\nscenario = open_loop\n")
    assert run.main(["spectrum", "--config", config]) == 2


@pytest.mark.parametrize("text", ["lambda1 = abc\nlambda2 = 1\nscenario = open_loop\n",
                                  "lambda1 = 1\nscenario = open_loop\n",
                                  "lambda1 = 1\nlambda2 = 1\nscenario = open_loop\nspeed = 3\n"])
def test_configuration_errors_exit_with_two(tmp_path, text):
    assert run.main(["spectrum", "--config", write_config(tmp_path, text)]) == 2


def test_missing_configuration_and_bad_arguments(tmp_path):
    assert run.main(["kernels", "--config", str(tmp_path / "nowhere.conf")]) == 2
    assert run.main(["launch"]) == 2
    assert run.main(["kernels"]) == 2


def run_kernels(tmp_path, name):
    config = write_config(tmp_path, "lambda1 = 20\nlambda2 = 10\nscenario = state_feedback\n")
    out = tmp_path / name
    assert run.main(["kernels", "--config", config, "--out", str(out), "--n", "32"]) == 0
    return out


def test_kernels_command_writes_surfaces_and_gains(tmp_path):
    out = run_kernels(tmp_path, "first")
    for family in KernelFamily:
        assert (out / f"kernel_{family.value}.csv").exists()

    with open(out / "gains_feedback.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == ["y", "Kuu", "Kuv", "Kvu", "Kvv"]
    assert float(rows[-1]["y"]) == 1.0
    assert float(rows[-1]["Kuv"]) == pytest.approx(-10.0, abs=1e-12)

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "kernels"
    assert manifest["kernel_options"]["n"] == 32
    assert {k["family"] for k in manifest["kernels"]} == {f.value for f in KernelFamily}
    assert "gains_observer_anticollocated.csv" in manifest["outputs"]
    assert "gains_observer_collocated.csv" in manifest["outputs"]


def test_kernel_outputs_are_reproducible(tmp_path):
    first = run_kernels(tmp_path, "first")
    second = run_kernels(tmp_path, "second")
    csvs = sorted(p.name for p in first.glob("*.csv"))
    assert len(csvs) == 7
    for name in csvs:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_kernel_csv_reads_back(tmp_path):
    out = run_kernels(tmp_path, "first")
    loaded = read_kernel_csv(out / "kernel_control.csv", KernelFamily.CONTROL, 20.0, 10.0)
    direct = control_kernel(20.0, 10.0, 32)
    assert loaded.n == 32
    for name, component in direct.components().items():
        np.testing.assert_array_equal(loaded.components()[name], component)


@pytest.mark.parametrize("scenario, observer", [("state_feedback", False),
                                                ("output_feedback_anticollocated", True)])
def test_simulate_command_exports_time_series(tmp_path, scenario, observer):
    config = write_config(tmp_path, "lambda1 = 20\nlambda2 = 10\nscenario = open_loop\n"
                                    "dt = 1e-3\nt_final = 0.1\nrecord_every = 10\n")
    out = tmp_path / scenario
    assert run.main(["simulate", "--config", config, "--out", str(out), "--n", "32", "--nx", "32",
                     "--scenario", scenario]) == 0

    with open(out / "snapshots.csv", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    assert header == (["t", "x", "u", "v", "uhat", "vhat"] if observer else ["t", "x", "u", "v"])
    with open(out / "norms.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 11
    assert ("V_lyap" in rows[0]) is observer
    with open(out / "controls.csv", encoding="utf-8") as f:
        assert f.readline().strip() == "t,U1,U2,measurement"
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["config"]["scenario"] == scenario
    assert sorted(manifest["outputs"]) == ["controls.csv", "norms.csv", "snapshots.csv"]


def fake_checks(passing):
    def good(ctx):
        assert ctx.resolutions == (16, 32)
        return [at_most("z_bound", 0.5, 1.0), at_least("a_rate", 3.0, 2.0)]

    def bad(ctx):
        return [CheckResult("m_failure", 2.0, 1.0, False, "<=")]

    return {"good": good} if passing else {"good": good, "bad": bad}


@pytest.mark.parametrize("passing, status", [(True, 0), (False, 1)])
def test_verify_reports_and_exit_status(tmp_path, monkeypatch, passing, status):
    monkeypatch.setattr(verification, "CHECKS", fake_checks(passing))
    config = write_config(tmp_path, "lambda1 = 20\nlambda2 = 10\nscenario = state_feedback\n")
    out = tmp_path / "verify"
    assert run.main(["verify", "--config", config, "--out", str(out), "--n", "16"]) == status

    with open(out / "verification_report.csv", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    names = [row["name"] for row in rows]
    assert names == sorted(names)
    assert {row["passed"] for row in rows} == ({"pass"} if passing else {"pass", "fail"})
    assert (out / "verification_report.txt").read_text(encoding="utf-8").startswith("Verification:")
    assert (out / "manifest.json").exists()


def test_raising_check_group_is_reported_as_failure(tmp_path, monkeypatch):
    def broken(ctx):
        raise RuntimeError("boom")

    monkeypatch.setattr(verification, "CHECKS", {"broken": broken})
    config = write_config(tmp_path, "lambda1 = 1\nlambda2 = 1\nscenario = open_loop\n")
    assert run.main(["verify", "--config", config, "--out", str(tmp_path / "v"), "--n", "16"]) == 1


def test_state_feedback_check_reports_overshoot_constants():
    K, L = control_kernel(20.0, 10.0, 64), inverse_kernel(20.0, 10.0, 64)
    cfg = SimConfig(20.0, 10.0, Scenario.STATE_FEEDBACK, nx=100, dt=1e-3)
    ctx = VerificationContext(cfg, 64, kernels={(KernelFamily.CONTROL, 64): K, (KernelFamily.INVERSE, 64): L})
    rows = {r.name: r for r in check_state_feedback(ctx)}

    k_inf, l_inf, overshoot = kernel_bounds(K, L)
    assert rows["control_kernel_sup_norm"].value == pytest.approx(k_inf)
    assert rows["inverse_kernel_sup_norm"].value == pytest.approx(l_inf)
    assert rows["state_feedback_overshoot"].bound == pytest.approx(overshoot)
    assert rows["state_feedback_overshoot"].passed
    assert 0.0 < rows["state_feedback_overshoot"].value
    assert rows["state_feedback_rate"].value == pytest.approx(SLOWEST_MODE, rel=0.10)
