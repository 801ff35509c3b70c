import json

import pytest

from vlsim.metrics import (REPORT_COLUMNS, ManifestError, RunManifest,
                           cli_run, export_csv, export_json, import_json,
                           run_manifest)


def manifest_dict(out_dir, messages=40):
    return {
        "workloads": [{"name": "ping_pong", "messages": messages}],
        "backends": ["vl", "cas"],
        "seed": 5,
        "out_dir": str(out_dir),
    }


def test_manifest_parses_and_reports_bad_fields(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(manifest_dict(tmp_path)))
    m = RunManifest.from_file(p)
    assert m.backends == ["vl", "cas"]
    assert m.seed == 5

    p.write_text("{not json")
    with pytest.raises(ManifestError, match="m.json:1"):
        RunManifest.from_file(p)

    with pytest.raises(ManifestError, match="workloads"):
        RunManifest.from_dict({"workloads": []})
    with pytest.raises(ManifestError, match="name"):
        RunManifest.from_dict({"workloads": [{}]})
    with pytest.raises(ManifestError, match="backend"):
        RunManifest.from_dict({"workloads": [{"name": "halo"}],
                               "backends": ["zmq"]})


def test_report_rows_and_normalization(tmp_path):
    m = RunManifest.from_dict(manifest_dict(tmp_path))
    report, results = run_manifest(m)
    assert len(report.rows) == 2
    vl = report.row("ping_pong", "vl")
    cas = report.row("ping_pong", "cas")
    assert cas["speedup"] == 1.0
    assert vl["speedup"] > 1.0
    assert vl["snoops_norm"] <= 1.0
    assert vl["checksum"] == cas["checksum"]


def test_csv_schema_and_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    export_csv([], path)
    assert path.read_text() == ",".join(REPORT_COLUMNS) + "\n"

    export_csv([{c: 0 for c in REPORT_COLUMNS}], path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(REPORT_COLUMNS)
    assert len(lines) == 2


def test_json_round_trip(tmp_path):
    rows = [{"workload": "halo", "backend": "vl", "wall_cycles": 12,
             "speedup": 1.5, "checksum": "abc"}]
    path = tmp_path / "r.json"
    export_json(rows, path)
    assert import_json(path) == rows


def test_cli_run_writes_report_and_manifest_copy(tmp_path):
    out = tmp_path / "out"
    m = RunManifest.from_dict(manifest_dict(out))
    assert cli_run(m) == 0
    assert (out / "report.csv").exists()
    assert (out / "report.json").exists()
    assert json.loads((out / "manifest.json").read_text())["seed"] == 5


def test_cli_run_twice_is_byte_identical(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert cli_run(RunManifest.from_dict(manifest_dict(out))) == 0
    for name in ("report.csv", "report.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_out_dir_env_override(tmp_path, monkeypatch):
    override = tmp_path / "forced"
    monkeypatch.setenv("VLSIM_OUT_DIR", str(override))
    m = RunManifest.from_dict(manifest_dict(tmp_path / "ignored", messages=10))
    assert cli_run(m) == 0
    assert (override / "report.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_emit_trace_writes_line_oriented_event_trace(tmp_path):
    out = tmp_path / "out"
    raw = manifest_dict(out, messages=8)
    raw["emit_trace"] = True
    assert cli_run(RunManifest.from_dict(raw)) == 0
    trace = (out / "ping_pong_vl.trace").read_text().splitlines()
    assert trace
    # schema: cycle kind core addr detail
    first = trace[0].split()
    assert first[0].isdigit()
    assert first[2].isdigit()
    assert first[3].startswith("0x")
