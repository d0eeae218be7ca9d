import json
from pathlib import Path

import pytest

import bundlegen as bg
from bundlegen.cli import (
    EXIT_PROVIDER,
    EXIT_STAGE,
    RunConfig,
    cmd_demo,
    cmd_eval,
    cmd_infer,
    main,
    resolve_config,
    run_lock,
)
from bundlegen.errors import StageError
from bundlegen.mockscripts import perfect_oracle_script


@pytest.fixture()
def script_path(tmp_path, perfect_script):
    path = tmp_path / "script.json"
    perfect_script.save(path)
    return path


def base_args(run_dir, script_path):
    return [
        "--run-dir", str(run_dir),
        "--dataset", str(bg.fixture_path()),
        "--provider", "mock",
        "--mock-script", str(script_path),
    ]


def run_all(run_dir, script_path, commands=("ingest", "embed", "retrieve", "demo", "infer", "eval")):
    for command in commands:
        rc = main([command] + base_args(run_dir, script_path))
        assert rc == 0, command


class TestPipeline:
    def test_full_mock_run_scores_ones(self, tmp_path, script_path, capsys):
        run_dir = tmp_path / "run"
        run_all(run_dir, script_path)
        report = json.loads((run_dir / "eval" / "report.json").read_text())
        assert (report["precision"], report["recall"], report["coverage"]) == (1.0, 1.0, 1.0)
        manifest = json.loads((run_dir / "infer" / "manifest.json").read_text())
        assert len(manifest["results"]) == 3

    def test_demo_rerun_makes_no_llm_calls(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        run_all(run_dir, script_path, commands=("ingest", "embed", "retrieve", "demo"))
        log_before = (run_dir / "llm_log.jsonl").read_text()
        assert main(["demo"] + base_args(run_dir, script_path)) == 0
        assert (run_dir / "llm_log.jsonl").read_text() == log_before

    def test_eval_before_infer_is_a_prerequisite_error(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        run_all(run_dir, script_path, commands=("ingest",))
        assert main(["eval"] + base_args(run_dir, script_path)) == EXIT_STAGE

    def test_stage_reexecution_never_mutates_earlier_artifacts(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        run_all(run_dir, script_path)
        snapshots = {
            p: p.read_bytes()
            for p in run_dir.rglob("*")
            if p.is_file() and "llm_log" not in p.name
        }
        run_all(run_dir, script_path)
        for path, blob in snapshots.items():
            assert path.read_bytes() == blob, path

    def test_report_consolidates_runs(self, tmp_path, script_path, capsys):
        for name in ("run_a", "run_b"):
            run_all(tmp_path / name, script_path)
        capsys.readouterr()
        rc = main(["report", "--run-dir", str(tmp_path / "run_a"), "--run-dir", str(tmp_path / "run_b")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "run_a" in out and "run_b" in out and "1.0000" in out

    def test_zero_shot_run_completes_without_demos(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        args = base_args(run_dir, script_path) + ["--mode", "zero-shot"]
        for command in ("ingest", "embed", "retrieve", "demo", "infer", "eval"):
            assert main([command] + args) == 0, command
        assert not list((run_dir / "demo").glob("demo_*.json"))
        report = json.loads((run_dir / "eval" / "report.json").read_text())
        assert report["precision"] == 1.0

    def test_parallel_workers_produce_the_same_report(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        args = base_args(run_dir, script_path) + ["--workers", "3"]
        for command in ("ingest", "embed", "retrieve", "demo", "infer", "eval"):
            assert main([command] + args) == 0, command
        report = json.loads((run_dir / "eval" / "report.json").read_text())
        assert (report["precision"], report["recall"], report["coverage"]) == (1.0, 1.0, 1.0)

    def test_few_shot_run_completes(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        args = base_args(run_dir, script_path) + ["--mode", "few-shot"]
        for command in ("ingest", "embed", "retrieve", "demo", "infer"):
            assert main([command] + args) == 0, command
        manifest = json.loads((run_dir / "infer" / "manifest.json").read_text())
        assert manifest["mode"]["mode"] == "few_shot_random"
        for name in manifest["results"]:
            payload = json.loads((run_dir / "infer" / name).read_text())
            assert payload["source_demonstrations"]


class TestRetrievalVariants:
    def test_random_neighbor_mode_is_seeded_and_labeled(self, tmp_path, script_path):
        config = {
            "dataset": str(bg.fixture_path()),
            "seed": 13,
            "mode": {"mode": "dicl", "use_top_neighbor": False},
            "generator": {"kind": "mock", "script_path": str(script_path)},
            "rater1": {"kind": "mock", "script_path": str(script_path)},
            "rater2": {"kind": "mock", "script_path": str(script_path)},
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))

        picks = []
        for name in ("one", "two"):
            run_dir = tmp_path / name
            for command in ("ingest", "embed", "retrieve"):
                assert main([command, "--run-dir", str(run_dir), "--config", str(config_path)]) == 0
            neighbors = json.loads((run_dir / "retrieve" / "neighbors.json").read_text())
            picks.append(neighbors)
        assert picks[0] == picks[1]  # same seed, same random neighbors
        sessions, _, gt = bg.load_dataset(bg.fixture_path())
        for ranked in picks[0].values():
            for sid, score in ranked:
                assert sid in gt and score == 0.0

    def test_ablation_flags_flow_through_the_pipeline(self, tmp_path, script_path):
        config = {
            "dataset": str(bg.fixture_path()),
            "mode": {"mode": "dicl", "use_rules": False, "use_self_correct": False},
            "generator": {"kind": "mock", "script_path": str(script_path)},
            "rater1": {"kind": "mock", "script_path": str(script_path)},
            "rater2": {"kind": "mock", "script_path": str(script_path)},
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))
        run_dir = tmp_path / "run"
        for command in ("ingest", "embed", "retrieve", "demo", "infer", "eval"):
            assert main([command, "--run-dir", str(run_dir), "--config", str(config_path)]) == 0
        report = json.loads((run_dir / "eval" / "report.json").read_text())
        assert report["precision"] == 1.0


class TestConfigHandling:
    def test_config_mismatch_is_rejected(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        run_all(run_dir, script_path, commands=("ingest",))
        rc = main(["embed"] + base_args(run_dir, script_path) + ["--k", "3"])
        assert rc == EXIT_STAGE

    def test_later_stages_reuse_the_stored_config(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        run_all(run_dir, script_path, commands=("ingest",))
        assert main(["embed", "--run-dir", str(run_dir)]) == 0

    def test_config_file_round_trip(self, tmp_path):
        config = RunConfig(dataset="d.jsonl", seed=7)
        clone = RunConfig.from_dict(json.loads(config.canonical_json()))
        assert clone == config

    def test_missing_mock_script_is_a_stage_error(self, tmp_path):
        run_dir = tmp_path / "run"
        rc = main([
            "ingest", "--run-dir", str(run_dir), "--dataset", str(bg.fixture_path()),
            "--provider", "mock",
        ])
        assert rc == 0  # ingest needs no provider
        rc = main(["embed", "--run-dir", str(run_dir)])
        assert rc == 0
        rc = main(["retrieve", "--run-dir", str(run_dir)])
        assert rc == 0
        rc = main(["demo", "--run-dir", str(run_dir)])
        assert rc == EXIT_STAGE


class TestLocking:
    def test_concurrent_writer_is_rejected(self, tmp_path):
        run_dir = tmp_path / "run"
        with run_lock(run_dir):
            with pytest.raises(StageError, match="locked"):
                with run_lock(run_dir):
                    pass

    def test_lock_released_after_command(self, tmp_path, script_path):
        run_dir = tmp_path / "run"
        run_all(run_dir, script_path, commands=("ingest",))
        assert not (run_dir / ".lock").exists()
