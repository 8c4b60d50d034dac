import json
import subprocess
import sys

import pytest

from possense.cli import main
from possense.synth import demo_scenario


@pytest.fixture(scope="module")
def demo_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert main(["run-all", "--out", str(out)]) == 0
    return out


def test_run_all_counts_planted_agents(demo_bundle):
    summary = json.loads((demo_bundle / "summary.json").read_text())
    assert summary["tracks"] == summary["planted_agents"] == len(demo_scenario().agents)
    for sub in ("track", "group", "monitor", "eval"):
        assert list((demo_bundle / sub).glob("manifest_*.json"))


def test_manifest_records_inputs(demo_bundle):
    m = json.loads((demo_bundle / "track" / "manifest_track.json").read_text())
    assert m["command"] == "track"
    assert all(not p.startswith("/") for p in m["inputs"])
    assert "numpy" in m["versions"]


def test_eval_against_itself(demo_bundle, tmp_path, capsys):
    gt = demo_bundle / "input" / "gt.txt"
    assert main(["eval", "--gt", str(gt), "--results", str(gt), "--out", str(tmp_path)]) == 0
    table = (tmp_path / "mot_report.txt").read_text()
    assert table.splitlines()[1].split()[0] == "100.0%"


def test_invalid_key_exits_nonzero(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path), "--set", "tracking.max_agee=3"])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["key"] == "tracking.max_agee"


def test_missing_input_reports_error(tmp_path, capsys):
    code = main(["group", "--tracks", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
    assert code == 1
    assert "nope.csv" in capsys.readouterr().err


def test_stagewise_commands(demo_bundle, tmp_path):
    inp = demo_bundle / "input"
    assert main(["track", "--detections", str(inp / "det.txt"), "--calib", str(inp / "calibration.json"),
                 "--appearance", str(inp / "appearance.bin"), "--min-len", "4", "--out", str(tmp_path / "t")]) == 0
    assert main(["group", "--tracks", str(tmp_path / "t" / "world_tracks.csv"), "--window", "10", "--out", str(tmp_path / "g")]) == 0
    assert main(["monitor", "--tracks", str(tmp_path / "t" / "world_tracks.csv"),
                 "--partitions", str(tmp_path / "g" / "partitions.jsonl"), "--threshold", "2",
                 "--zones", str(inp / "zones.json"), "--out", str(tmp_path / "m")]) == 0
    for name in ("distance_events.csv", "contact_events.csv", "mask_crops.csv", "report.csv"):
        assert (tmp_path / "m" / name).exists()
    assert (tmp_path / "g" / "partitions.jsonl").read_bytes() == (demo_bundle / "group" / "partitions.jsonl").read_bytes()


def test_grouping_eval_direct_ids(tmp_path):
    gt = tmp_path / "gt.jsonl"
    gt.write_text(json.dumps({"window": 0, "groups": [[1, 2, 3]]}) + "\n")
    pred = tmp_path / "pred.jsonl"
    pred.write_text(json.dumps({"window": 0, "groups": [[1, 2], [3]]}) + "\n")
    assert main(["eval", "--mode", "grouping", "--gt", str(gt), "--results", str(pred), "--out", str(tmp_path / "e")]) == 0
    row = (tmp_path / "e" / "group_report.csv").read_text().splitlines()[1].split(",")
    assert row[:3] == ["1.000000", "0.333333", "0.500000"]


def test_env_override_reaches_cli(tmp_path):
    env = {"POSSENSE_TRACKING__MAX_AGEE": "3", "PATH": ""}
    proc = subprocess.run([sys.executable, "-m", "possense.cli", "synth", "--out", str(tmp_path)],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["key"] == "tracking.max_agee"
