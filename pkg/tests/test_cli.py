import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from swing_impedance.cli import main
from swing_impedance.config import package_data
from swing_impedance.config import load_config as read_keyvalue
from swing_impedance.tables import read_table

DATA = Path(__file__).parent / "data"
DEVICE = str(package_data("sample_device.csv"))
BASELINE = str(package_data("sample_baseline.csv"))
IDENT = str(DATA / "ident_recording.csv")


def tree_digest(root, skip=()):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(root).iterdir()) if p.name not in skip}


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def preprocessed(tmp_path_factory):
    out = tmp_path_factory.mktemp("pre")
    assert main(["--out", str(out), "preprocess", DEVICE, "--baseline", BASELINE]) == 0
    return out


@pytest.fixture(scope="module")
def ident_strides(tmp_path_factory):
    out = tmp_path_factory.mktemp("ident_pre")
    cfg = out / "raw.cfg"
    cfg.write_text("preprocess.force_cutoff = 0\n")
    assert main(["--config", str(cfg), "--out", str(out), "preprocess", IDENT]) == 0
    return out / "p1_device_strides.csv"


def test_preprocess_matches_golden(preprocessed):
    got = read_keyvalue(preprocessed / "transparency.txt")
    want = read_keyvalue(DATA / "golden_transparency.txt")
    assert list(got) == list(want)
    for key, val in want.items():
        assert float(got[key]) == pytest.approx(float(val), abs=1e-9), key
    for joint in ("hip", "knee", "ankle"):
        assert got[f"{joint}.pass"] == "1"


def test_preprocess_prints_verdicts(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "preprocess", DEVICE, "--baseline", BASELINE]) == 0
    out = capsys.readouterr().out
    assert "hip    RMSE 0.0300 rad  ISV_ave 0.0470 rad  PASS" in out
    assert "force  RMS 2.00 N  max |F| 4.63 N" in out


def test_preprocess_outputs(preprocessed):
    names = {p.name for p in preprocessed.iterdir()}
    for tag in ("p1_device", "p1_baseline"):
        for kind in ("events", "strides", "outliers", "ensemble"):
            assert f"{tag}_{kind}.csv" in names
    cols, units = read_table(preprocessed / "p1_device_ensemble.csv")
    assert cols["hip_mean"].size == 500 and units["hip_mean"] == "rad"
    cols, _ = read_table(preprocessed / "p1_baseline_outliers.csv")
    assert cols["kept"].sum() == 40


def test_empty_file_exit_2(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["--out", str(tmp_path / "o"), "preprocess", str(empty)]) == 2
    assert "empty" in capsys.readouterr().err


def test_missing_grf_column_named(tmp_path, capsys):
    lines = Path(DEVICE).read_text().splitlines()
    cols, _ = read_table(DEVICE)
    del cols["grf_vertical"]
    from swing_impedance.tables import write_table
    bad = tmp_path / "nogrf.csv"
    write_table(bad, cols)
    assert lines
    assert main(["--out", str(tmp_path / "o"), "preprocess", str(bad)]) == 2
    assert "grf_vertical" in capsys.readouterr().err


def test_malformed_row_reports_line(tmp_path, capsys):
    text = Path(DEVICE).read_text().splitlines()
    k = next(i for i, line in enumerate(text) if line and line[0].isdigit()) + 3
    fields = text[k].split(",")
    fields[3] = "abc"
    text[k] = ",".join(fields)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(text) + "\n")
    assert main(["--out", str(tmp_path / "o"), "preprocess", str(bad)]) == 2
    assert f"bad.csv:{k + 1}:" in capsys.readouterr().err


def test_identify_fixture(tmp_path, ident_strides):
    out = tmp_path / "id"
    assert main(["--out", str(out), "identify", str(ident_strides), "--onset", "0.175"]) == 0
    res = read_keyvalue(out / "ident_result.txt")
    truth = dict(K_hip=60, K_knee=5, K_ankle=10, D_hip=3, D_knee=0.5, D_ankle=1)
    for k, v in truth.items():
        tol = 1.0 if k.startswith("K") else 0.1
        assert abs(float(res[k]) - v) <= tol, k
    for joint in ("hip", "knee", "ankle"):
        assert float(res[f"vaf_{joint}"]) >= 99.9
    cols, _ = read_table(out / "ident_traces.csv")
    assert {"t", "measured_hip", "model_hip"} <= set(cols)
    first = tree_digest(out, skip={"manifest.json"})
    again = tmp_path / "id2"
    assert main(["--out", str(again), "identify", str(ident_strides), "--onset", "0.175"]) == 0
    assert tree_digest(again, skip={"manifest.json"}) == first


def test_identify_onset_beyond_swing(tmp_path, ident_strides, capsys):
    assert main(["--out", str(tmp_path), "identify", str(ident_strides),
                 "--onset", "0.9"]) == 2
    assert "no valid strides" in capsys.readouterr().err


def test_validate_smoke_subset_and_bad_noise(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "validate.indices = 0, 364\nvalidate.n_restarts = 3\n")
    out = tmp_path / "val"
    assert main(["--config", cfg, "--out", str(out), "validate"]) == 0
    cols, _ = read_table(out / "validation_table.csv")
    assert np.all(np.abs([cols[f"err_K_{j}"] for j in ("hip", "knee", "ankle")]) <= 1.0)
    bad = write_cfg(tmp_path, "validate.noise_peak_to_peak = -0.01\n", "bad.cfg")
    assert main(["--config", bad, "--out", str(tmp_path / "v2"), "validate"]) == 2
    assert "noise" in capsys.readouterr().err


def test_simulate_controller_step(tmp_path):
    assert main(["--out", str(tmp_path), "simulate-controller", "--scenario", "step"]) == 0
    m = read_keyvalue(tmp_path / "metrics.txt")
    assert 85 <= float(m["steady_state_percent"]) <= 95
    assert 0.005 <= float(m["rise_time"]) <= 0.020
    assert 10 <= float(m["overshoot_percent"]) <= 50
    cols, units = read_table(tmp_path / "trace.csv")
    assert units["F_m"] == "N" and cols["t"].size == 4000


def test_simulate_controller_noise(tmp_path):
    assert main(["--out", str(tmp_path), "simulate-controller", "--scenario", "noise"]) == 0
    m = read_keyvalue(tmp_path / "metrics.txt")
    assert float(m["bandwidth"]) >= 20
    cols, _ = read_table(tmp_path / "frf.csv")
    assert cols["f"].size > 100


def test_unstable_controller_exit_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "plant.velocity_gain = 5000\nplant.motor_inertia = 0.01\n")
    assert main(["--config", cfg, "--out", str(tmp_path / "o"), "simulate-controller"]) == 1
    assert "aborted" in capsys.readouterr().err


def test_rerun_byte_identical(tmp_path, ident_strides):
    runs = {
        "pre": ["preprocess", DEVICE, "--baseline", BASELINE],
        "ident": ["identify", str(ident_strides), "--onset", "0.175"],
        "val": ["validate"],
        "ctrl": ["simulate-controller"],
    }
    cfg = write_cfg(tmp_path, "validate.indices = 13\nvalidate.n_restarts = 2\n")
    for name, args in runs.items():
        out = tmp_path / name
        assert main(["--config", cfg, "--seed", "5", "--out", str(out)] + args) == 0
        before = tree_digest(out)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 5 and manifest["subcommand"] == args[0]
        assert main(["rerun", str(out / "manifest.json")]) == 0
        assert tree_digest(out) == before, name
        elsewhere = tmp_path / f"{name}_copy"
        assert main(["rerun", str(out / "manifest.json"), "--to", str(elsewhere)]) == 0
        assert tree_digest(elsewhere, skip={"manifest.json"}) == tree_digest(
            out, skip={"manifest.json"}), name


def test_report(tmp_path, preprocessed, capsys):
    run = tmp_path / "run"
    shutil.copytree(preprocessed, run)
    assert main(["--out", str(tmp_path / "rep"), "report", str(run)]) == 0
    text = (tmp_path / "rep" / "report.txt").read_text()
    assert text.startswith("run: preprocess")
    assert "hip.pass = 1" in text
    before = tree_digest(run)
    assert main(["--out", str(run), "report", str(run)]) == 0
    assert tree_digest(run) == before
    assert main(["--out", str(tmp_path / "x"), "report", str(tmp_path)]) == 2


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "swing_impedance.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
