# lab/test_experiment.py - CONFIG FILES, VALIDATION, RUNS AND SWEEPS
from pathlib import Path

import numpy as np
import pytest
from django.conf import settings

from lab.services.experiment import (
    ConfigFileError,
    ExitCode,
    ExperimentError,
    load_config,
    read_config_file,
    run,
    sweep,
    validate_config,
)
from lab.utils.csv_writer import format_value, read_csv, read_key_values

SMALL = {
    "name": "classical-small",
    "flux": [0.0, 0.0, -0.5],
    "alpha_minus": -1.0,
    "alpha_plus": 1.0,
    "L": 20.0,
    "N": 256,
    "dt": 0.01,
    "t_end": 2.0,
    "record_every": 0.1,
    "amplitude": 0.01,
    "snapshot_times": [0, 1],
    "run_picard": False,
    "run_linop_checks": False,
}


@pytest.fixture
def small_config():
    return validate_config(dict(SMALL))


# ================================================================
# CONFIG FILES
# ================================================================

CONFIG_TEXT = """
# comment line
name = cubic   # trailing comment
flux = [0.0, 0.0, 0.0, -0.3333333333333333]
alpha_minus = 1.0
alpha_plus = 2.0
t_end = 4.0
amplitude = 0.01
trial_times = 0, 0.5, 1
snapshot_times = []
N = 512
run_picard = false
separation = none
energy_window = none
"""


def write_config(tmp_path, text):
    path = tmp_path / "lab.cfg"
    path.write_text(text, encoding="utf-8")
    return path


def test_config_file_is_read_as_strings(tmp_path):
    values = read_config_file(write_config(tmp_path, CONFIG_TEXT))
    assert values["name"] == "cubic"
    assert values["flux"] == "[0.0, 0.0, 0.0, -0.3333333333333333]"
    assert values["trial_times"] == "0, 0.5, 1"
    assert values["run_picard"] == "false"
    assert "comment" not in values


def test_config_file_values_are_converted(tmp_path):
    config = load_config(write_config(tmp_path, CONFIG_TEXT))
    assert config.name == "cubic"
    assert config.flux == (0.0, 0.0, 0.0, -0.3333333333333333)
    assert config.trial_times == (0.0, 0.5, 1.0)
    assert config.snapshot_times == ()
    assert config.N == 512 and isinstance(config.N, int)
    assert config.run_picard is False
    assert config.separation is None
    assert config.energy_window is None
    assert config.dense_record_until == 0.0


def test_config_file_rejects_duplicates(tmp_path):
    with pytest.raises(ConfigFileError) as excinfo:
        read_config_file(write_config(tmp_path, "N = 256\nL = 20\nN = 512\n"))
    assert excinfo.value.line_number == 3


@pytest.mark.parametrize("line", ["just words", "= 3", "flag"])
def test_config_file_rejects_malformed_lines(tmp_path, line):
    with pytest.raises(ConfigFileError) as excinfo:
        read_config_file(write_config(tmp_path, f"name = x\n\n# note\n{line}\n"))
    assert excinfo.value.line_number == 4


@pytest.mark.parametrize("flux", ["[1, 2", "[0, 1, , 2]", "0, 1, abc"])
def test_config_file_rejects_bad_lists(tmp_path, flux):
    text = CONFIG_TEXT.replace("[0.0, 0.0, 0.0, -0.3333333333333333]", flux)
    with pytest.raises(ExperimentError) as excinfo:
        load_config(write_config(tmp_path, text))
    assert "flux" in str(excinfo.value)


def test_shipped_configs_are_valid():
    for name in ("classical", "cubic"):
        config = load_config(Path(settings.BASE_DIR) / "configs" / f"{name}.cfg")
        assert config.name == name
        assert config.N == 2048
        assert config.datum == "triangle_pair"
        assert config.dense_record_until > 0


def test_missing_config_file(tmp_path):
    with pytest.raises(ExperimentError):
        load_config(tmp_path / "absent.cfg")


# ================================================================
# VALIDATION
# ================================================================

@pytest.mark.parametrize("changes,field", [
    ({"N": 1000}, "N"),
    ({"N": 8}, "N"),
    ({"epsilon": 0.0}, "epsilon"),
    ({"epsilon": 1.5}, "epsilon"),
    ({"alpha_plus": -2.0}, "alpha_plus"),
    ({"trial_times": [0.0, 5.0]}, "trial_times"),
    ({"snapshot_times": [3.0]}, "snapshot_times"),
    ({"nu": 0.0}, "nu"),
    ({"flux": [0.0, 1.0, 0.0]}, "flux"),
    ({"flux": [0.0, float("nan"), 1.0]}, "flux"),
    ({"energy_window": [2.0, 1.0]}, "energy_window"),
])
def test_invalid_configs(changes, field):
    with pytest.raises(ExperimentError) as excinfo:
        validate_config({**SMALL, **changes})
    assert field in str(excinfo.value)


def test_defaults_come_from_settings():
    raw = {k: v for k, v in SMALL.items() if k not in ("L", "N")}
    config = validate_config(raw)
    assert config.L == settings.LAB["L"]
    assert config.N == settings.LAB["N"]
    assert config.trial_times == (0.0,)
    assert config.datum == "deriv_bump"


def test_with_value_renames(small_config):
    changed = small_config.with_value("nu", 2)
    assert changed.nu == 2.0
    assert changed.name == "classical-small-nu=2"
    assert small_config.with_value("N", 512.0).N == 512
    with pytest.raises(ExperimentError):
        small_config.with_value("datum", 1.0)


def test_dry_run_computes_nothing(small_config, tmp_path):
    report = run(small_config, output_dir=tmp_path, dry_run=True)
    assert report.status == "dry_run"
    assert report.exit_code == ExitCode.PASSED
    assert not any(tmp_path.iterdir())


# ================================================================
# RUNS
# ================================================================

def test_small_run_writes_outputs(small_config, tmp_path):
    report = run(small_config, output_dir=tmp_path)
    # a smooth datum starts with a strip wider than y0, so there is no sqrt(t) transient to fit
    assert report.exit_code == ExitCode.VERDICT_FAILED
    assert report.message == "failed: strip"
    assert not report.verdict.sqrt_law_ok
    assert "fewer than 3 transient points" in report.verdict.diagnostics
    for name in ("summary.csv", "report.txt", "singularities.csv", "timeseries.csv", "verdict.txt",
                 "fields_t0.csv", "fields_t1.csv", "spectrum_t0.csv", "spectrum_t1.csv"):
        assert (tmp_path / name).is_file(), name
    assert not (tmp_path / "picard_run.csv").exists()

    summary = {row["key"]: row["value"] for row in read_csv(tmp_path / "summary.csv")}
    assert summary == {k: format_value(v) for k, v in report.scalars().items()}
    assert float(summary["y0"]) == pytest.approx(np.pi, rel=1e-10)

    rows = read_csv(tmp_path / "timeseries.csv")
    assert len(rows) == 20
    assert float(rows[0]["t"]) == pytest.approx(0.1)
    assert all(float(row["mass"]) == 0.0 for row in rows)

    verdict = read_key_values(tmp_path / "verdict.txt")
    assert float(verdict["y0"]) == pytest.approx(np.pi, rel=1e-10)
    assert len(read_csv(tmp_path / "fields_t1.csv")) == 256


def test_dense_recording_covers_the_early_transient(small_config, tmp_path):
    config = small_config.replace(dense_record_until=0.505, snapshot_times=())
    run(config, output_dir=tmp_path)
    t = [float(row["t"]) for row in read_csv(tmp_path / "timeseries.csv")]
    # every step from the warmup to 0.5, then every record_every
    assert len(t) == 41 + 15
    assert t[:3] == pytest.approx([0.1, 0.11, 0.12])
    assert t[40] == pytest.approx(0.5)
    assert t[41] == pytest.approx(0.6)


def test_runs_are_deterministic(small_config, tmp_path):
    run(small_config, output_dir=tmp_path / "a")
    run(small_config, output_dir=tmp_path / "b")
    for name in ("summary.csv", "timeseries.csv", "report.txt", "singularities.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_convex_flux_is_refused(tmp_path):
    config = validate_config({**SMALL, "flux": [0.0, 0.0, 0.5]})
    report = run(config, output_dir=tmp_path)
    assert report.exit_code == ExitCode.INVALID_INPUT
    assert report.status == "refused"
    assert "entropy" in report.message
    assert (tmp_path / "summary.csv").is_file()


def test_blow_up_is_a_numeric_failure(tmp_path):
    config = validate_config({**SMALL, "amplitude": 1e3, "dt": 0.5, "t_end": 20.0, "snapshot_times": []})
    report = run(config, output_dir=tmp_path)
    assert report.exit_code == ExitCode.NUMERIC_FAILURE
    assert report.message.startswith("evolution failed at t=")


# ================================================================
# SWEEPS
# ================================================================

def test_viscosity_sweep_scales_strip(small_config, tmp_path):
    rows = sweep(small_config, "nu", [0.5, 1.0, 2.0], output_root=tmp_path)
    assert [row.value for row in rows] == [0.5, 1.0, 2.0]
    for row, expected in zip(rows, (np.pi / 2, np.pi, 2 * np.pi)):
        assert row.report is not None
        assert row.report.y0 == pytest.approx(expected, rel=1e-6)
    summary = read_csv(tmp_path / "sweep_summary.csv")
    assert [row["value"] for row in summary] == ["0.5", "1.0", "2.0"]
    assert (tmp_path / "nu=0.5" / "summary.csv").is_file()


def test_empty_sweep_writes_header_only(small_config, tmp_path):
    assert sweep(small_config, "nu", [], output_root=tmp_path) == []
    assert (tmp_path / "sweep_summary.csv").read_text().startswith("axis,value,status")
    assert read_csv(tmp_path / "sweep_summary.csv") == []


def test_sweep_rejects_non_numeric_axis(small_config, tmp_path):
    with pytest.raises(ExperimentError):
        sweep(small_config, "datum", [1.0], output_root=tmp_path)


# ================================================================
# FULL RUNS
# ================================================================

@pytest.mark.slow
def test_classical_config_end_to_end(tmp_path):
    config = load_config(Path(settings.BASE_DIR) / "configs" / "classical.cfg")
    report = run(config, output_dir=tmp_path)
    assert report.exit_code == ExitCode.PASSED, report.message
    verdict = report.verdict
    assert verdict.monotone_ok
    assert 0.4 <= verdict.transient_slope <= 0.6
    assert verdict.saturation_ok
    assert verdict.y0 == pytest.approx(np.pi, rel=1e-8)
    assert report.y0 == pytest.approx(np.pi, rel=1e-8)
    assert report.energy_fit.r2 > 0.99
    assert report.omega == pytest.approx(0.25, abs=0.01)
    assert report.energy_fit.gap_ratio == pytest.approx(1.0, rel=0.15)
    assert np.isfinite(report.t_star)
    assert report.cross_solver_error < 1e-2
    assert (tmp_path / "picard_run.csv").is_file()
    assert (tmp_path / "spectrum.csv").is_file()
