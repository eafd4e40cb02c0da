import json
import math

import numpy as np
import pytest

from bergerflow.blowup import Alignment, rescaled_frame
from bergerflow.flow import FlowTrajectory, Stepping, StopCriteria, StopReason, run
from bergerflow.initial import construct_initial_metric
from bergerflow.output import (
    CSV_COLUMNS,
    ManifestWriter,
    OutputError,
    alignment_table,
    decode_float,
    encode_float,
    load_checkpoint,
    load_trajectory,
    parse_row,
    profile_dump,
    profile_load,
    read_series,
    record_row,
    series_csv,
    verify_manifest,
    write_checkpoint,
    write_outputs,
)
from bergerflow.profile import SpatialGrid, compute_diagnostics

from .conftest import kahler_params, record


def _short_run(**kwargs):
    profile = construct_initial_metric(kahler_params(), SpatialGrid(65))
    return run(profile, 0.5, StopCriteria(max_steps=60), Stepping(stride=5), **kwargs)


def test_float_text():
    assert encode_float(0.1) == "0.1"
    assert encode_float(0.1, hexfloat=True) == "0x1.999999999999ap-4"
    assert decode_float(" 0x1.999999999999ap-4") == 0.1
    assert decode_float("-0X1P+1") == -2.0
    assert math.isnan(decode_float(encode_float(math.nan, hexfloat=True)))
    assert decode_float(encode_float(-math.inf, hexfloat=True)) == -math.inf


def test_csv_header_only():
    text = series_csv([])
    assert text == ",".join(CSV_COLUMNS) + "\n"


def test_csv_columns():
    assert CSV_COLUMNS[:12] == (
        "t",
        "mu",
        "mu_argmin",
        "g_plus",
        "psi_min",
        "psi_max",
        "F_max_abs",
        "fs_min",
        "fs_max",
        "sup_curv",
        "Q_min",
        "threshold",
    )
    assert CSV_COLUMNS[12:17] == ("flag_a", "flag_b", "flag_c", "flag_d", "flag_e")


def test_row(kahler):
    rec = compute_diagnostics(kahler, 0.5)
    row = record_row(rec)
    assert list(row) == list(CSV_COLUMNS)
    assert row["flag_e"] == "1"
    assert row["mu_argmin"] == "0"
    assert parse_row(row) == rec
    assert parse_row(record_row(rec, hexfloat=True)) == rec


def test_row_ignores_unknown_columns():
    rec = record(0.5, 0.7)
    row = {**record_row(rec), "future": "1"}
    assert parse_row(row) == rec


def test_read_series(tmp_path):
    series = [record(0.0, 1.0, step=0), record(0.1, 0.9, step=10, dt=1e-3)]
    path = tmp_path / "series.csv"
    path.write_text(series_csv(series, hexfloat=True))
    assert read_series(path) == series


@pytest.mark.parametrize("hexfloat", (False, True))
def test_profile_exact(kahler, hexfloat):
    profile = kahler.replace(t=1 / 3)
    data = json.loads(json.dumps(profile_dump(profile, hexfloat)))
    res = profile_load(data)
    assert res.t == profile.t
    assert res.boundary is profile.boundary
    for name in ("f", "g", "jac"):
        np.testing.assert_array_equal(getattr(res, name), getattr(profile, name))


def test_profile_schema(kahler):
    data = profile_dump(kahler)
    data["schema_version"] = 99
    with pytest.raises(OutputError, match="schema"):
        profile_load(data)


def test_write_outputs(tmp_path):
    trajectory = _short_run()
    manifest = write_outputs(trajectory, [], [], tmp_path, extra={"config.ini": b"[run]\n"})
    assert manifest["complete"]
    assert list(manifest["files"]) == sorted(manifest["files"])
    assert {"series.csv", "trajectory.json", "config.ini"} <= set(manifest["files"])
    assert "alignments.json" not in manifest["files"]
    assert json.loads((tmp_path / "manifest.json").read_text()) == manifest
    assert verify_manifest(tmp_path) == []
    summary = json.loads((tmp_path / "trajectory.json").read_text())
    assert summary["stop_reason"] == "max_steps"
    assert summary["node_count"] == 65
    assert summary["records"] == len(trajectory.series)


def test_load_trajectory(tmp_path):
    trajectory = _short_run()
    write_outputs(trajectory, [], [], tmp_path, hexfloat=True)
    (tmp_path / "snapshots" / "99999.json").write_text("stale")
    res = load_trajectory(tmp_path)
    assert res.series == trajectory.series
    assert res.stop_reason is StopReason.MAX_STEPS
    assert res.T_est == trajectory.T_est
    assert len(res.snapshots) == len(trajectory.snapshots)
    np.testing.assert_array_equal(res.snapshots[-1].g, trajectory.snapshots[-1].g)


def test_empty_trajectory(tmp_path):
    manifest = write_outputs(FlowTrajectory(0.5), [], [], tmp_path)
    assert manifest["complete"]
    assert (tmp_path / "series.csv").read_text() == ",".join(CSV_COLUMNS) + "\n"
    assert json.loads((tmp_path / "trajectory.json").read_text())["node_count"] is None


def test_hash_tracks_payload(tmp_path):
    trajectory = _short_run()
    first = write_outputs(trajectory, [], [], tmp_path / "a")
    again = write_outputs(trajectory, [], [], tmp_path / "b")
    assert first["files"] == again["files"]
    trajectory.series[-1] = record(1.0, 0.5)
    changed = write_outputs(trajectory, [], [], tmp_path / "c")
    assert changed["files"]["series.csv"] != first["files"]["series.csv"]
    assert changed["files"]["trajectory.json"] == first["files"]["trajectory.json"]


def test_verify_detects_tampering(tmp_path):
    write_outputs(_short_run(), [], [], tmp_path)
    with (tmp_path / "series.csv").open("a") as f:
        f.write("\n")
    (tmp_path / "trajectory.json").unlink()
    assert sorted(verify_manifest(tmp_path)) == ["series.csv", "trajectory.json"]


def test_partial_write(tmp_path):
    (tmp_path / "series.csv").mkdir()
    manifest = write_outputs(_short_run(), [], [], tmp_path)
    assert not manifest["complete"]
    assert "series.csv" not in manifest["files"]
    assert "trajectory.json" in manifest["files"]


def test_manifest_extend(tmp_path):
    writer = ManifestWriter(tmp_path)
    writer.write("a.txt", b"a")
    writer.close()
    writer = ManifestWriter.open(tmp_path)
    writer.write_json("b.json", {"b": 1})
    manifest = writer.close({"note": "x"})
    assert set(manifest["files"]) == {"a.txt", "b.json"}
    assert manifest["note"] == "x"
    assert verify_manifest(tmp_path) == []


def test_write_outputs_keeps_entries(tmp_path):
    writer = ManifestWriter.open(tmp_path)
    writer.write_json("soliton.json", {"chi": 0.0})
    writer.close()
    first = write_outputs(_short_run(), [], [], tmp_path)
    assert "soliton.json" in first["files"]
    assert any(n.startswith("snapshots/") for n in first["files"])
    again = write_outputs(FlowTrajectory(0.5), [], [], tmp_path)
    assert set(again["files"]) == {"series.csv", "soliton.json", "trajectory.json"}
    assert verify_manifest(tmp_path) == []


def test_manifest_discard(tmp_path):
    writer = ManifestWriter(tmp_path)
    writer.files = {"a.txt": "0", "snapshots/00000.json": "1", "snapshotsx.json": "2"}
    writer.discard("a.txt", "snapshots/")
    assert writer.files == {"snapshotsx.json": "2"}


def test_alignment_table(kahler):
    frame = rescaled_frame(kahler.replace(t=0.2))
    rows = alignment_table([frame], [Alignment(chi=0.1, scale=1.0, dist=0.01, f2_dist=0.02)])
    assert rows == [
        {
            "t": 0.2,
            "K": pytest.approx(1.0),
            "mu": pytest.approx(1.0),
            "chi": 0.1,
            "scale": 1.0,
            "dist": 0.01,
            "f2_dist": 0.02,
        }
    ]


def test_checkpoint_resume(tmp_path):
    path = tmp_path / "checkpoint.json"
    stepping = Stepping(stride=5)
    stop = StopCriteria(max_steps=60)

    def save(state):
        if state.step == 25:
            write_checkpoint(path, state, stepping, stop)

    full = _short_run(on_record=save)
    ck = load_checkpoint(path)
    assert ck.stepping == stepping
    assert ck.stop == stop
    assert ck.state.step == 25
    resumed = run(ck.state.profile, ck.state.delta, ck.stop, ck.stepping, state=ck.state)
    assert series_csv(resumed.series, hexfloat=True) == series_csv(full.series, hexfloat=True)
    assert resumed.T_est == full.T_est
    np.testing.assert_array_equal(resumed.snapshots[-1].g, full.snapshots[-1].g)


def test_checkpoint_unreadable(tmp_path):
    path = tmp_path / "checkpoint.json"
    path.write_text("{")
    with pytest.raises(OutputError, match="not readable"):
        load_checkpoint(path)
