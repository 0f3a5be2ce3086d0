from __future__ import annotations

import csv
import json
import statistics

import pytest

from goldens import ELSYS, elsys_message
from sensorplane.api.cli import main
from sensorplane.api.platform import Platform
from sensorplane.core import Timestamp
from sensorplane.fixtures import path as fixture_path


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_rules_check_ok(capsys):
    code, out, _ = run(capsys, "rules", "check", fixture_path("wgb.rules"), "--json")
    assert code == 0 and json.loads(out) == {"ok": True, "rules": ["window_opened", "room_filling", "coffee_break"]}


def test_rules_check_error(capsys, tmp_path):
    bad = tmp_path / "bad.rules"
    bad.write_text("complex fine <= a(x)\n\ncomplex broken <= a(x) & \n")
    code, _, err = run(capsys, "rules", "check", str(bad))
    assert code == 1 and err.startswith(f"{bad}:3:")
    code, out, _ = run(capsys, "rules", "check", str(bad), "--json")
    assert code == 1 and json.loads(out)["line"] == 3


def test_sim_run_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "sim", "run", "--scenario", fixture_path("scenario_small.json"), "--seed", "9",
                           "--out", str(tmp_path / name), "--json")
        assert code == 0
    summary = json.loads(out)
    assert summary["emitted"] == summary["delivered"] + summary["dropped"]
    assert (tmp_path / "a" / "trace.ndjson").read_bytes() == (tmp_path / "b" / "trace.ndjson").read_bytes()
    assert (tmp_path / "a" / "ground_truth.ndjson").read_bytes() == (tmp_path / "b" / "ground_truth.ndjson").read_bytes()


def test_report_latency_on_injected_trace(capsys, tmp_path):
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({
        "duration": 600, "latency_models": {"lora": {"dist": "normal", "mean_ms": 57.15, "std_ms": 10.21}},
        "sensors": [{"kind": "periodic", "count": 100, "interval": 10, "latency": "lora"}]}))
    assert run(capsys, "sim", "run", "--scenario", str(scen), "--seed", "1", "--out", str(tmp_path / "o"))[0] == 0
    ecdf = tmp_path / "ecdf.csv"
    code, out, _ = run(capsys, "report", "latency", "--trace", str(tmp_path / "o" / "trace.ndjson"),
                       "--ecdf", str(ecdf), "--json")
    assert code == 0
    with open(ecdf, newline="") as fh:
        gateway = [float(r["value_ms"]) for r in csv.DictReader(fh) if r["stage"] == "gateway"]
    assert len(gateway) == 6000 and abs(statistics.fmean(gateway) - 57.15) < 2
    assert json.loads(out)["gateway"]["mean"] == pytest.approx(statistics.fmean(gateway), abs=1e-5)
    code, text, _ = run(capsys, "report", "latency", "--trace", str(tmp_path / "o" / "trace.ndjson"))
    assert code == 0 and text.splitlines()[0].startswith("stage")


def test_report_latency_empty_trace(capsys, tmp_path):
    empty = tmp_path / "empty.ndjson"
    empty.write_text("")
    code, _, err = run(capsys, "report", "latency", "--trace", str(empty))
    assert code == 1 and err.startswith("sensorplane: error:")


def _seed_data(tmp_path):
    msg = elsys_message()
    p = Platform.from_config(threaded=False, clock=lambda: Timestamp.parse(msg["ts"]), data_dir=str(tmp_path / "d"))
    p.publish(msg["topic"], json.dumps(msg["payload"]))
    p.close()
    return p.data_dir


def test_replay_query_and_heatmap(capsys, tmp_path):
    data = _seed_data(tmp_path)
    code, out, _ = run(capsys, "replay", "--data-dir", data, "--json")
    summary = json.loads(out)
    assert code == 0 and summary["sensors_with_readings"] == 1 and summary["records"]["permission"] == 2

    code, out, _ = run(capsys, "query", "/readings/get/" + ELSYS, "--data-dir", data)
    assert code == 0 and json.loads(out)["features"]["co2"] == 415
    code, _, _ = run(capsys, "query", "/sensors/get/nobody", "--data-dir", data)
    assert code == 1

    grid_path = tmp_path / "grid.json"
    code, out, _ = run(capsys, "heatmap", "--floor", "1", "--feature", "co2", "--out", str(grid_path),
                       "--cell", "2", "--data-dir", data, "--json")
    grid = json.loads(grid_path.read_text())
    assert code == 0 and json.loads(out)["filled"] > 0
    assert {c["value"] for c in grid["cells"] if c["crate_id"] == "FE11"} == {415}


def test_failures_exit_nonzero(capsys, tmp_path):
    assert run(capsys, "replay", "--data-dir", str(tmp_path))[0] == 1
    assert run(capsys, "sim", "run", "--scenario", str(tmp_path / "missing.json"))[0] == 1
    code, _, err = run(capsys, "heatmap", "--floor", "1", "--feature", "smell", "--out", str(tmp_path / "g.json"),
                       "--data-dir", str(tmp_path / "d"))
    assert code == 1 and "smell" in err


def test_serve_for_a_moment(capsys, tmp_path):
    code, out, _ = run(capsys, "serve", "--data-dir", str(tmp_path / "d"), "--port", "0", "--duration", "0.3")
    assert code == 0 and out.startswith("serving on http://127.0.0.1:")


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["sim"])
    assert ei.value.code == 2
