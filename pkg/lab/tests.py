# lab/tests.py - MANAGEMENT COMMANDS, LEDGER MODEL AND SERIALIZERS
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from lab.models import ExperimentRun
from lab.serializers import ExperimentRunSerializer

SMALL_CONFIG = """
name = classical-small
flux = [0.0, 0.0, -0.5]
alpha_minus = -1.0
alpha_plus = 1.0
L = 20.0
N = 256
dt = 0.01
t_end = 2.0
amplitude = 0.01
run_picard = false
run_linop_checks = false
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def convex_cfg(tmp_path):
    path = tmp_path / "convex.cfg"
    path.write_text(SMALL_CONFIG.replace("-0.5]", "0.5]"), encoding="utf-8")
    return path


# ================================================================
# RUN COMMAND
# ================================================================

@pytest.mark.django_db
def test_dry_run_is_recorded(small_cfg, capsys):
    call_command("run", str(small_cfg), "--dry-run")
    out = capsys.readouterr().out
    assert '"name": "classical-small"' in out
    assert "Config is valid (dry run)" in out
    record = ExperimentRun.objects.get()
    assert record.status == "dry_run"
    assert record.config["N"] == 256


@pytest.mark.django_db
def test_refused_run_exits_with_invalid_input(convex_cfg, tmp_path):
    with pytest.raises(CommandError) as excinfo:
        call_command("run", str(convex_cfg), "--out", str(tmp_path / "out"), "--no-progress")
    assert excinfo.value.returncode == 2
    assert "entropy" in str(excinfo.value)
    assert ExperimentRun.objects.get().status == "refused"


@pytest.mark.django_db
def test_missing_config_exits_with_invalid_input(tmp_path):
    with pytest.raises(CommandError) as excinfo:
        call_command("run", str(tmp_path / "absent.cfg"))
    assert excinfo.value.returncode == 2
    assert not ExperimentRun.objects.exists()


@pytest.mark.django_db
def test_run_command_records_outcome(small_cfg, tmp_path):
    out = tmp_path / "out"
    # the smooth default datum has no sqrt(t) transient, so the strip verdict fails
    with pytest.raises(CommandError) as excinfo:
        call_command("run", str(small_cfg), "--out", str(out), "--no-progress")
    assert excinfo.value.returncode == 1
    record = ExperimentRun.objects.get()
    assert record.status == "verdict_failed"
    assert record.exit_code == 1
    assert record.message == "failed: strip"
    assert record.output_dir == str(out)
    assert (out / "summary.csv").is_file()


# ================================================================
# SWEEP COMMAND
# ================================================================

@pytest.mark.django_db
def test_sweep_records_each_run(small_cfg, tmp_path, capsys):
    call_command("sweep", str(small_cfg), "--axis", "nu", "--values", "1, 2", "--out", str(tmp_path / "sweep"))
    assert "2 run(s) summarised" in capsys.readouterr().out
    records = ExperimentRun.objects.order_by("sweep_value")
    assert [r.sweep_axis for r in records] == ["nu", "nu"]
    assert [r.sweep_value for r in records] == [1.0, 2.0]
    assert (tmp_path / "sweep" / "sweep_summary.csv").is_file()


@pytest.mark.django_db
def test_sweep_rejects_bad_values(small_cfg):
    with pytest.raises(CommandError) as excinfo:
        call_command("sweep", str(small_cfg), "--axis", "nu", "--values", "1,abc")
    assert excinfo.value.returncode == 2


@pytest.mark.django_db
def test_sweep_rejects_unknown_axis(small_cfg, tmp_path):
    with pytest.raises(CommandError) as excinfo:
        call_command("sweep", str(small_cfg), "--axis", "datum", "--values", "1", "--out", str(tmp_path))
    assert excinfo.value.returncode == 2


# ================================================================
# LEDGER
# ================================================================

@pytest.mark.django_db
def test_ledger_model_and_serializer():
    run = ExperimentRun.objects.create(name="classical", status="passed", exit_code=0, y0=3.14159, omega=0.25)
    assert str(run) == "classical [passed]"
    assert run.passed
    assert not ExperimentRun(name="x", status="refused").passed

    data = ExperimentRunSerializer(run).data
    assert set(data) == set(ExperimentRunSerializer.Meta.fields)
    assert data["y0"] == pytest.approx(3.14159)
    assert data["sweep_value"] is None
