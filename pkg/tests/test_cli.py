from __future__ import annotations

import json

import pytest

from conftest import FULL_BINDINGS, corpus_stats, full_fixture_endpoints, write_corpus
from crosscap.cli import main
from crosscap.pipeline import PipelineConfig


@pytest.fixture
def workspace(tmp_path):
    fixtures, manifest, oracle = write_corpus(tmp_path, 6)
    cfg = PipelineConfig(endpoints=full_fixture_endpoints(fixtures), bindings=dict(FULL_BINDINGS))
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(cfg.to_json_dict()), encoding="utf-8")
    return tmp_path, fixtures, manifest, config_path, oracle


def test_run_eval_export_cycle(workspace, capsys):
    tmp_path, fixtures, manifest, config_path, oracle = workspace
    run_dir = tmp_path / "run"
    rc = main(["run", "--manifest", str(manifest), "--config", str(config_path), "--out-dir", str(run_dir)])
    assert rc == 0
    assert (run_dir / "results.jsonl").exists()
    out = capsys.readouterr().out
    assert "processed 6 image(s), 0 failed" in out

    stats_path = tmp_path / "stats.json"
    stats_path.write_text(json.dumps(corpus_stats(oracle).to_json_dict()), encoding="utf-8")
    questions_path = tmp_path / "questions.jsonl"
    rc = main(
        [
            "gen-questions",
            "--stats", str(stats_path),
            "--fixtures", str(fixtures),
            "--strategy", "popular",
            "--seed", "3",
            "--out", str(questions_path),
        ]
    )
    assert rc == 0
    lines = [json.loads(l) for l in questions_path.read_text().splitlines()]
    assert lines, "question generation produced nothing"
    golds = {l["gold"] for l in lines}
    assert golds == {"yes", "no"}

    rc = main(["eval", "--run", str(run_dir), "--questions", str(questions_path), "--judge", "tg"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "before" in out and "after" in out
    assert (run_dir / "eval_report.json").exists()

    dataset = tmp_path / "dataset.jsonl"
    rc = main(["export", "--run", str(run_dir), "--out", str(dataset), "--allow-missing-images"])
    assert rc == 0
    assert len(dataset.read_text().splitlines()) == 6


def test_run_uses_env_config(workspace, monkeypatch):
    tmp_path, _, manifest, config_path, _ = workspace
    monkeypatch.setenv("HALLU_CONFIG", str(config_path))
    rc = main(["run", "--manifest", str(manifest), "--out-dir", str(tmp_path / "run_env")])
    assert rc == 0


def test_run_without_config_fails(workspace, monkeypatch, capsys):
    tmp_path, _, manifest, _, _ = workspace
    monkeypatch.delenv("HALLU_CONFIG", raising=False)
    rc = main(["run", "--manifest", str(manifest), "--out-dir", str(tmp_path / "x")])
    assert rc == 1
    assert "no config file" in capsys.readouterr().err


def test_run_mode_override_gates_enhancement(workspace):
    tmp_path, _, manifest, config_path, _ = workspace
    run_dir = tmp_path / "run_hcnet"
    rc = main(
        [
            "run",
            "--manifest", str(manifest),
            "--config", str(config_path),
            "--mode", "hcnet",
            "--out-dir", str(run_dir),
        ]
    )
    assert rc == 0
    for line in (run_dir / "results.jsonl").read_text().splitlines():
        record = json.loads(line)
        assert "Some additional information includes:" not in record["final_caption"]
    snapshot = json.loads((run_dir / "config-snapshot.json").read_text())
    assert snapshot["mode"] == "hcnet"


def test_fixtures_validate_ok(workspace, capsys):
    _, fixtures, _, _, _ = workspace
    rc = main(["fixtures", "validate", str(fixtures)])
    assert rc == 0
    assert "OK" in capsys.readouterr().out


def test_fixtures_validate_catches_problems(tmp_path, capsys):
    bad = {
        "img1": {
            "image_id": "img1",
            "present_objects": [],
            "tag_pool": [["cone", 0.5]],
            "object_captions": {},
            "vqa_error_rate": 0.0,
            "seed": 1,
        }
    }
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad), encoding="utf-8")
    rc = main(["fixtures", "validate", str(path)])
    assert rc == 1
    out = capsys.readouterr().out
    assert "present_objects is empty" in out
    assert "no object_captions entry" in out


def test_run_exit_code_reflects_failures(workspace):
    tmp_path, fixtures, manifest, config_path, _ = workspace
    rows = [json.loads(l) for l in manifest.read_text().splitlines()]
    rows.append({"image_id": "img_ghost", "caption": "There is a car."})
    bad_manifest = tmp_path / "bad_manifest.jsonl"
    bad_manifest.write_text("".join(json.dumps(r) + "\n" for r in rows))
    rc = main(["run", "--manifest", str(bad_manifest), "--config", str(config_path), "--out-dir", str(tmp_path / "runf")])
    assert rc == 1
