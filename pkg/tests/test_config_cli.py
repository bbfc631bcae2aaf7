import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from pydantic import ValidationError

from paintbec.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, EXIT_PHYSICS, main
from paintbec.config import RunConfig, load_config, save_config
from paintbec.painting import iq_samples, read_waveform_csv

from conftest import data_path, write_json

SHIPPED = ["painting_regimes.json", "reference_schedule.json", "fast_sequence.json"]


def _raw(name):
    return json.loads(data_path(name).read_text())


def _summary(path):
    with open(path) as fh:
        return {k: v for k, v in list(csv.reader(fh))[1:]}


def _variant(tmp_path, name, edit, fname="cfg.json"):
    cfg = _raw(name)
    edit(cfg)
    p = tmp_path / fname
    write_json(p, cfg)
    return str(p)


# --------------------------------------------------------------------------
# config


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_validate_and_round_trip(tmp_path, name):
    cfg = load_config(data_path(name))
    save_config(cfg, tmp_path / "again.json")
    assert load_config(tmp_path / "again.json") == cfg
    assert RunConfig.model_validate_json(cfg.to_json()) == cfg


def test_unknown_key_rejected(tmp_path):
    raw = _raw("reference_schedule.json")
    raw["model"]["spill_etta"] = 5.0
    with pytest.raises(ValidationError):
        RunConfig.model_validate(raw)
    write_json(tmp_path / "bad.json", raw)
    assert main(["evap", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_dimensioned_keys_carry_units():
    suffixes = ("_W", "_m", "_Hz", "_K", "_Tpm", "_s", "_kg", "_mps2", "_Wpm2", "_m6ps", "_Gamma", "_MHz")
    dimensioned = {"duration", "power", "stroke", "waist", "wavelength", "temperature", "radius", "dt",
                   "gradient", "frequency", "calibration"}

    def walk(d):
        for k, v in d.items():
            if isinstance(v, dict):
                if k != "bounds":
                    yield from walk(v)
                continue
            if isinstance(v, list) and v and isinstance(v[0], dict):
                for item in v:
                    yield from walk(item)
            yield k

    for name in SHIPPED:
        for key in walk(_raw(name)):
            if any(word in key for word in dimensioned) and "bounds" not in key:
                assert key.endswith(suffixes) or key in ("cooling_power", "repump_power", "pump_power"), key


def test_empty_dwell_rejected(tmp_path):
    def edit(c):
        c["paint"]["dwell"] = {"profile": None, "positions_m": [], "weights": []}

    p = _variant(tmp_path, "painting_regimes.json", edit)
    assert main(["paint", "--config", p, "--out", str(tmp_path / "o")]) == EXIT_INVALID


# --------------------------------------------------------------------------
# paint


@pytest.fixture(scope="module")
def paint_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("paint")
    cfg = str(data_path("painting_regimes.json"))
    for run in ("a", "b"):
        assert main(["paint", "--config", cfg, "--out", str(base / run)]) == EXIT_OK
    return base


def test_paint_outputs_and_regimes(paint_runs):
    out = paint_runs / "a"
    for lab in "abcd":
        for stem in ("spectrum", "profile", "map"):
            assert (out / f"{stem}_{lab}.csv").exists()
    assert (out / "paint.png").stat().st_size > 0
    rows = {r["panel"]: r for r in csv.DictReader(open(out / "corrugation.csv"))}
    assert rows["a"]["regime"] == "static"
    assert rows["b"]["regime"] == "dragging"
    assert rows["c"]["regime"] == "resolved" and float(rows["c"]["corrugation"]) > 0.5
    assert rows["d"]["regime"] == "smooth" and float(rows["d"]["corrugation"]) < 0.05
    spec_a = np.loadtxt(out / "spectrum_a.csv", delimiter=",", skiprows=1, ndmin=2)
    assert spec_a.shape[0] == 1 and spec_a[0, 0] == 80e6


def test_paint_rerun_is_byte_identical(paint_runs):
    a, b = paint_runs / "a", paint_runs / "b"
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


# --------------------------------------------------------------------------
# trap


def test_trap_report(tmp_path, capsys):
    code = main(["trap", "--config", str(data_path("reference_schedule.json")), "--at", "0.2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "trap.csv")))
    assert [int(r["mF"]) for r in rows] == [-1, 0, 1]
    zero = rows[1]
    assert zero["status"] == "ok" and float(zero["depth_uK"]) > 0
    assert float(rows[0]["depth_uK"]) < float(zero["depth_uK"])
    assert capsys.readouterr().out.startswith("t_s,mF,x_m")


def test_trap_untrapped_exit_codes(tmp_path):
    def edit(c):
        for seg in c["schedule"]["segments"]:
            seg["power_start_W"] = [1e-5, 1e-5]
            seg["power_end_W"] = [1e-5, 1e-5]

    p = _variant(tmp_path, "reference_schedule.json", edit)
    assert main(["trap", "--config", p, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "o" / "trap.csv")))
    assert all(r["status"] == "untrapped" and float(r["depth_uK"]) == 0.0 for r in rows)
    assert main(["trap", "--config", p, "--strict"]) == EXIT_PHYSICS


def test_trap_time_out_of_range(tmp_path):
    assert main(["trap", "--config", str(data_path("reference_schedule.json")), "--at", "5"]) == EXIT_INVALID


# --------------------------------------------------------------------------
# evap


def test_evap_fast_sequence_cycle_time(tmp_path):
    assert main(["evap", "--config", str(data_path("fast_sequence.json")), "--out", str(tmp_path)]) == EXIT_OK
    s = _summary(tmp_path / "summary.csv")
    assert float(s["cycle_time_s"]) == pytest.approx(0.486, abs=1e-12)
    assert s["status"] == "ok"
    assert (tmp_path / "trajectory.csv").exists() and (tmp_path / "trajectory.png").exists()


def test_evap_zero_atoms(tmp_path):
    def edit(c):
        c["simulation"]["initial"] = {"N": [0.0, 0.0, 0.0], "temperature_K": 18e-6}

    p = _variant(tmp_path, "reference_schedule.json", edit)
    assert main(["evap", "--config", p, "--out", str(tmp_path / "o"), "--no-plots"]) == EXIT_OK
    data = np.genfromtxt(tmp_path / "o" / "trajectory.csv", delimiter=",", names=True)
    assert np.all(data["N_m1"] == 0) and np.all(data["N_0"] == 0) and np.all(data["N_p1"] == 0)


def test_evap_failure_exit_codes(tmp_path):
    def edit(c):
        last = c["schedule"]["segments"][-1]
        last["power_end_W"] = [0.0, 0.0]
        c["schedule"]["hold_s"] = 0.0
        c["schedule"]["ramp_up_s"] = 0.0

    p = _variant(tmp_path, "reference_schedule.json", edit)
    assert main(["evap", "--config", p, "--out", str(tmp_path / "a"), "--no-plots"]) == EXIT_OK
    s = _summary(tmp_path / "a" / "summary.csv")
    assert s["status"] == "untrapped" and 0 < float(s["failure_time_s"]) <= 0.24
    assert main(["evap", "--config", p, "--out", str(tmp_path / "b"), "--no-plots", "--strict"]) == EXIT_PHYSICS


# --------------------------------------------------------------------------
# optimize


def test_benchmark_sphere_deterministic(tmp_path, capsys):
    cfg = str(data_path("reference_schedule.json"))
    for run in ("a", "b"):
        assert main(["optimize", "--config", cfg, "--out", str(tmp_path / run), "--benchmark", "sphere"]) == EXIT_OK
    out = capsys.readouterr().out
    best = float(out.strip().splitlines()[-1].split(",")[1])
    assert best > -1e-6
    assert (tmp_path / "a" / "record.csv").read_bytes() == (tmp_path / "b" / "record.csv").read_bytes()
    assert main(["optimize", "--config", cfg, "--out", str(tmp_path / "c"), "--benchmark", "ackley"]) == EXIT_INVALID


def _tiny_optimizer(c, stage=2):
    o = c["optimizer"]
    o.update(stage=stage, population=4, generations=1, random_baseline=4)
    o["stage1"].update(population=4, generations=1)


def test_optimize_stage2_26_parameters(tmp_path):
    p = _variant(tmp_path, "reference_schedule.json", _tiny_optimizer)
    out = tmp_path / "o"
    assert main(["optimize", "--config", p, "--out", str(out), "--stage", "2", "--params", "26", "--no-plots"]) == EXIT_OK
    header = (out / "record.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["generation", "member", "objective"] and len(header) == 3 + 26
    best = load_config(out / "best_config.json")
    save_config(best, tmp_path / "again.json")
    assert load_config(tmp_path / "again.json") == best
    assert len(best.schedule.segments) == 6
    s = _summary(out / "summary.csv")
    assert int(s["parameters"]) == 26 and int(s["evaluations"]) == 8
    assert main(["optimize", "--config", p, "--out", str(out), "--stage", "2", "--params", "25", "--no-plots"]) == EXIT_INVALID


def test_optimize_stage1(tmp_path):
    p = _variant(tmp_path, "reference_schedule.json", lambda c: _tiny_optimizer(c, stage=1))
    out = tmp_path / "o"
    assert main(["optimize", "--config", p, "--out", str(out), "--no-plots"]) == EXIT_OK
    header = (out / "record_stage1.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 3 + 14
    best = load_config(out / "best_config.json")
    orig = load_config(p).schedule.segments
    assert best.schedule.segments[2:] == orig[2:]
    assert best.schedule.segments[1].model_copy(update={"jump": False}) == orig[1]


# --------------------------------------------------------------------------
# export-waveform


def _export(tmp_path, fmt, edit=None, sub="o"):
    p = _variant(tmp_path, "reference_schedule.json", edit or (lambda c: None), f"cfg_{sub}.json")
    assert main(["export-waveform", "--config", p, "--out", str(tmp_path / sub), "--format", fmt]) == EXIT_OK
    return tmp_path / sub / f"waveform.{fmt}", load_config(p)


def _periods(c):
    c["export"]["n_periods"] = 3


def test_export_csv_header(tmp_path):
    path, _ = _export(tmp_path, "csv")
    assert path.read_text().splitlines()[0] == "t_s,f_Hz,phase_rad"


def test_export_iq_length(tmp_path):
    path, cfg = _export(tmp_path, "iq", _periods)
    bc = cfg.beams[cfg.export.beam_index]
    t, _, _ = read_waveform_csv(_export(tmp_path, "csv", _periods, "c")[0])
    sample_rate = 1 / (t[1] - t[0])
    per_period = round(sample_rate / bc.painting_frequency_Hz)
    assert path.stat().st_size == per_period * 3 * 8
    assert len(t) == per_period * 3


def test_csv_to_iq_round_trip(tmp_path):
    iq_path, _ = _export(tmp_path, "iq", _periods, "i")
    csv_path, _ = _export(tmp_path, "csv", _periods, "c")
    t, f, _ = read_waveform_csv(csv_path)
    phase = np.concatenate([[0.0], np.cumsum(np.pi * (f[1:] + f[:-1]) * np.diff(t))])
    iq = np.fromfile(iq_path, dtype="<f4")
    assert np.max(np.abs(iq_samples(phase).astype(float) - iq)) < 1e-6


def test_export_format_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["export-waveform", "--config", str(data_path("reference_schedule.json")), "--out", str(tmp_path), "--format", "wav"])
    assert info.value.code == EXIT_INVALID


def test_io_errors(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = str(data_path("reference_schedule.json"))
    assert main(["export-waveform", "--config", cfg, "--out", str(blocker / "sub")]) == EXIT_IO
    assert main(["evap", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_IO


def test_console_script_installed(tmp_path):
    exe = shutil.which("paintbec")
    cmd = [exe] if exe else [sys.executable, "-m", "paintbec.cli"]
    res = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "paintbec" in res.stdout
    res = subprocess.run(cmd + ["paint"], capture_output=True, text=True)
    assert res.returncode == EXIT_INVALID
