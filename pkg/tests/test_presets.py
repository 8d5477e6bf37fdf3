import csv

import numpy as np
import pytest

from simfed.bench import run_bench
from simfed.errors import ConfigError
from simfed.metrics import RunManifest
from simfed.presets import PRESET_NAMES, PresetReport, run_preset


def test_unknown_preset_lists_choices():
    with pytest.raises(ConfigError, match="table1_biasvar"):
        run_preset("warp_drive", "/tmp/nowhere")


def test_report_passed_tristate():
    r = PresetReport("x", "d", ())
    assert r.passed is None
    assert PresetReport("x", "d", (), {"a": True, "b": True}).passed is True
    assert PresetReport("x", "d", (), {"a": True, "b": False}).passed is False


def test_preset_names_frozen():
    assert PRESET_NAMES == ("table1_biasvar", "theorem2_oracle", "noc_sweep",
                            "decay_check", "surface_fig")


def test_decay_check_artifacts(tmp_path):
    out = str(tmp_path / "decay")
    report = run_preset("decay_check", out, master_seed=0)
    assert report.passed is True
    assert set(report.files) == {"loss_trace.csv", "decay.csv"}
    man = RunManifest.read(out)
    assert man.status == "complete"
    assert man.verify_files(out) == []
    assert man.config["preset"] == "decay_check"
    with open(tmp_path / "decay" / "decay.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5  # one fit per mode
    for row in rows:
        assert float(row["r_squared"]) >= 0.95
        assert float(row["rate"]) > 0


def test_surface_fig_artifacts(tmp_path):
    out = str(tmp_path / "surface")
    report = run_preset("surface_fig", out, master_seed=0)
    assert report.passed is None  # a figure export asserts nothing
    with open(tmp_path / "surface" / "surface.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 25 * 25
    losses = np.array([float(r["loss"]) for r in rows])
    assert np.all(losses > 0)
    with open(tmp_path / "surface" / "anchors.csv") as fh:
        anchors = list(csv.DictReader(fh))
    assert [a["mode_k"] for a in anchors] == ["0", "1", "2"]
    assert float(anchors[0]["u"]) == 0.0 and float(anchors[0]["v"]) == 0.0


def test_preset_seed_changes_outputs(tmp_path):
    a = run_preset("decay_check", str(tmp_path / "a"), master_seed=0)
    b = run_preset("decay_check", str(tmp_path / "b"), master_seed=1)
    assert a.summary["rate"] != b.summary["rate"]


def test_bench_backends_agree(tmp_path):
    results, max_dev = run_bench(ages=3, runs=1)
    names = {r.backend for r in results}
    assert "numpy" in names
    assert all(r.seconds_per_run > 0 for r in results)
    assert max_dev < 1e-9
