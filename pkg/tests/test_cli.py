from __future__ import annotations

import json

import pytest

from branchwork.cli import main


@pytest.fixture
def task_file(tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    path = tmp_path / "task.json"
    path.write_text(
        json.dumps(
            {
                "task_id": "cli-demo",
                "description": "demo task",
                "metric_name": "score",
                "metric_direction": "maximize",
                "data_dir": str(data_dir),
            }
        ),
        encoding="utf-8",
    )
    return path


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"max_steps": 12, "wall_clock_limit": 1e6}), encoding="utf-8")
    return path


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


class TestCli:
    def test_simulated_run_writes_journal_and_report(self, task_file, config_file, tmp_path, capsys):
        out = tmp_path / "runs"
        code = run_cli(
            "run", "--task", task_file, "--config", config_file,
            "--simulate", "--seed", "3", "--out", out,
        )
        assert code == 0
        run_dir = out / "cli-demo-s3"
        assert (run_dir / "journal.jsonl").exists()
        assert (run_dir / "report.json").exists()
        assert (run_dir / "improvement_curve.csv").exists()
        assert (run_dir / "improvement_curve.png").exists()
        assert "best metric" in capsys.readouterr().out

    def test_replay_verifies_the_journal(self, task_file, config_file, tmp_path, capsys):
        out = tmp_path / "runs"
        run_cli("run", "--task", task_file, "--config", config_file, "--simulate", "--out", out)
        journal = out / "cli-demo-s0" / "journal.jsonl"
        assert run_cli("replay", "--journal", journal) == 0
        captured = capsys.readouterr().out
        assert "statistics_consistent: True" in captured

    def test_report_from_journal(self, task_file, config_file, tmp_path, capsys):
        out = tmp_path / "runs"
        run_cli("run", "--task", task_file, "--config", config_file, "--simulate", "--out", out)
        journal = out / "cli-demo-s0" / "journal.jsonl"
        report_dir = tmp_path / "reportout"
        assert run_cli("report", "--journal", journal, "--out", report_dir) == 0
        assert (report_dir / "improvement_curve.png").exists()

    def test_export_bundle(self, task_file, config_file, tmp_path, capsys):
        out = tmp_path / "runs"
        run_cli("run", "--task", task_file, "--config", config_file, "--simulate", "--out", out)
        journal = out / "cli-demo-s0" / "journal.jsonl"
        bundle = tmp_path / "bundle"
        assert run_cli("export", "--journal", journal, "--out", bundle) == 0
        assert (bundle / "solution.py").exists()
        assert (bundle / "metadata.json").exists()

    def test_resume_subcommand(self, task_file, tmp_path):
        out = tmp_path / "runs"
        config = tmp_path / "short.json"
        config.write_text(json.dumps({"wall_clock_limit": 40.0}), encoding="utf-8")
        run_cli("run", "--task", task_file, "--config", config, "--simulate", "--out", out)
        journal = out / "cli-demo-s0" / "journal.jsonl"
        code = run_cli(
            "resume", "--journal", journal, "--task", task_file,
            "--budget", "80", "--out", out,
        )
        assert code == 0
        assert (out / "cli-demo-s0-resumed" / "journal.jsonl").exists()

    def test_simulate_flag_overrides_a_configured_backend(self, task_file, tmp_path):
        config = tmp_path / "live.json"
        config.write_text(
            json.dumps(
                {
                    "max_steps": 4,
                    "wall_clock_limit": 1e6,
                    "backend": {"endpoint_url": "http://127.0.0.1:9/never", "model_name": "m"},
                }
            ),
            encoding="utf-8",
        )
        out = tmp_path / "runs"
        # Without --simulate this would try (and fail) to reach the backend;
        # with it the run must stay scripted and succeed.
        code = run_cli("run", "--task", task_file, "--config", config, "--simulate", "--out", out)
        assert code == 0
        journal = (out / "cli-demo-s0" / "journal.jsonl").read_text()
        assert '"backend_id":"scripted"' in journal

    def test_config_errors_exit_with_field_messages(self, tmp_path, capsys):
        bad_task = tmp_path / "task.json"
        bad_task.write_text(json.dumps({"task_id": "x"}), encoding="utf-8")
        assert run_cli("run", "--task", bad_task, "--simulate") == 2
        captured = capsys.readouterr().err
        assert "metric_direction" in captured
