from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest
from conftest import CLI_STEPS, run_cli_pipeline

from battcloud.cli import EXIT_ERROR, EXIT_GATED, EXIT_OK, main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    here = os.getcwd()
    os.chdir(root)
    try:
        codes = run_cli_pipeline()
    finally:
        os.chdir(here)
    return root, codes


def summary(root, sub):
    with open(root / sub / "summary.json", encoding="utf-8") as fh:
        return json.load(fh)


def test_every_step_exits_as_expected(pipeline):
    _, codes = pipeline
    expected = {step: EXIT_OK for step in CLI_STEPS}
    expected["soh estimate gated"] = EXIT_GATED
    assert codes == expected


def test_summaries_embed_config_and_seed(pipeline):
    root, _ = pipeline
    for sub in ("fleet", "ingest", "soc", "soceval", "socpred", "gate", "curves", "cal", "est", "watch", "replay"):
        s = summary(root, sub)
        assert s["format"] == "battcloud-summary" and isinstance(s["seed"], int)
        assert s["config"]["seed"] == s["seed"]
    assert summary(root, "fleet")["seed"] == 3
    assert summary(root, "replay")["seed"] == 5
    assert summary(root, "soc")["config"]["lm"]["max_iter"] == 15


def test_summary_config_reproduces_the_run(pipeline, tmp_path):
    root, _ = pipeline
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(summary(root, "soc")["config"]))
    assert main(["soc", "train", "--data", str(root / "fleet"), "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model.json").read_bytes() == (root / "soc" / "model.json").read_bytes()


def test_artifacts_written(pipeline):
    root, _ = pipeline
    for sub, name in (("ingest", "clean.csv"), ("ingest", "rejects.json"), ("soc", "model.json"),
                      ("cal", "lut.txt"), ("curves", "segment_00_dv.dat"), ("curves", "segment_00_ic.dat"),
                      ("socpred", "segment_00_soc.dat"), ("watch", "verdicts.jsonl"), ("watch", "timeline.dat"),
                      ("replay", "fault_verdicts.jsonl"), ("rpt", "report.txt")):
        assert (root / sub / name).stat().st_size > 0, (sub, name)
    assert (root / "curves" / "segment_00_ic.dat").read_text().startswith("# v_volt")
    assert any(p.name.endswith("_soc_pred.dat") for p in (root / "soceval").iterdir())


def test_estimate_close_to_truth(pipeline):
    root, _ = pipeline
    truth = json.loads((root / "fleet" / "ground_truth" / "truth.json").read_text())
    soh = truth["charges"]["telemetry/aged_02.csv"]["soh"]
    seg = summary(root, "est")["results"]["segments"][0]
    assert seg["status"] == "estimated"
    assert abs(seg["estimate"]["soh"] - soh) <= 5.0


def test_fast_charge_is_gated(pipeline):
    root, _ = pipeline
    assert [s["accepted"] for s in summary(root, "gate")["results"]["segments"]] == [False]
    assert summary(root, "estfast")["results"]["segments"][0]["status"] == "gated"


def test_replay_detects_before_threshold(pipeline):
    root, _ = pipeline
    run = summary(root, "replay")["results"]["runs"]["fault"]
    assert run["false_triggers"] == 0
    assert run["lead_minutes"] >= 60.0


def test_watch_resumes_from_state(pipeline, tmp_path):
    root, _ = pipeline
    state = tmp_path / "s.json"
    state.write_bytes((root / "watch.state").read_bytes())
    assert main(["thermal", "watch", "--input", str(root / "fleet/telemetry/pack.csv"), "--state", str(state),
                 "--out", str(tmp_path / "w")]) == 0
    assert summary(tmp_path, "w")["results"]["batches"] == 0


def test_report_lists_runs(pipeline):
    root, _ = pipeline
    runs = json.loads((root / "rpt" / "report.json").read_text())["runs"]
    assert {"fleet", "soc", "cal", "replay"} <= set(runs)


def test_gated_message_on_stderr(pipeline, tmp_path, capsys):
    root, _ = pipeline
    code = main(["soh", "estimate", "--input", str(root / "fleet/telemetry/fast.csv"),
                 "--lut", str(root / "cal/lut.txt"), "--out", str(tmp_path)])
    assert code == EXIT_GATED
    assert capsys.readouterr().err.startswith("gated: c-rate")


def test_usage_and_module_errors(tmp_path, capsys):
    assert main(["nonsense"]) == EXIT_ERROR
    assert main(["soh"]) == EXIT_ERROR
    assert main(["ingest", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_ERROR
    assert "error [" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["synth", "--scenario", str(bad), "--out", str(tmp_path)]) == EXIT_ERROR


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "battcloud", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "thermal" in proc.stdout
