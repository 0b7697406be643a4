"""
CLI integration tests through ``python -m fallchain``.
"""

import json
import os
import sys
from pathlib import Path
from subprocess import run

import pytest

ROOT = Path(__file__).resolve().parents[1]


def fallchain(*argv, cwd=None):
    env = dict(os.environ, PYTHONPATH=str(ROOT / "src"))
    env = {k: v for k, v in env.items() if not k.startswith("FALLCHAIN_")}
    return run([sys.executable, "-m", "fallchain", *argv], capture_output=True, text=True,
               cwd=cwd or ROOT, env=env)


class TestCLIIntegration:
    """End-to-end runs of the installed command surface."""

    def test_help_lists_commands(self):
        result = fallchain("--help")
        assert result.returncode == 0
        for command in ("ingest", "train-fed", "build-map", "simulate", "validate-log", "report"):
            assert command in result.stdout

    def test_unknown_command(self):
        result = fallchain("calibrate")
        assert result.returncode == 1
        assert "invalid choice" in result.stderr

    def test_simulate_twice_is_byte_identical(self, tmp_path):
        """Fixed scenario and seed: identical event logs"""
        for name in ("a", "b"):
            result = fallchain("simulate", "--runs", "2", "--seed", "7", "--out", str(tmp_path / name),
                               "--log-level", "error")
            assert result.returncode == 0, result.stderr
        for run_name in ("run_0000", "run_0001"):
            first = (tmp_path / "a" / "runs" / f"{run_name}.events.jsonl").read_bytes()
            second = (tmp_path / "b" / "runs" / f"{run_name}.events.jsonl").read_bytes()
            assert first and first == second
        summary = json.loads((tmp_path / "a" / "simulation.json").read_text())
        assert summary["batch"]["confirmed"] == 2

    def test_false_trigger_scenario(self, tmp_path):
        scenario = tmp_path / "false.yaml"
        scenario.write_text("name: false-trigger\nfall_at: null\nfalse_trigger_at: 4.0\n")
        result = fallchain("simulate", "--scenario", str(scenario), "--out", str(tmp_path / "out"),
                           "--log-level", "error")
        assert result.returncode == 0, result.stderr
        records = (tmp_path / "out" / "runs" / "run_0000.records.jsonl").read_text().splitlines()
        assert [json.loads(r)["type"] for r in records] == ["feedback"]
        events = tmp_path / "out" / "runs" / "run_0000.events.jsonl"
        last = json.loads(events.read_text().splitlines()[-1])
        assert last["to"] == "FalseAlarm"
        check = fallchain("validate-log", str(events), "--out", str(tmp_path / "out"))
        assert check.returncode == 0

    def test_environment_overrides_seed(self, tmp_path):
        env_run = run(
            [sys.executable, "-m", "fallchain", "simulate", "--out", str(tmp_path), "--log-level", "error"],
            capture_output=True, text=True, cwd=ROOT,
            env=dict(os.environ, PYTHONPATH=str(ROOT / "src"), FALLCHAIN_MISSION__NAV_FAIL="0.5"),
        )
        assert env_run.returncode == 0, env_run.stderr
        summary = json.loads((tmp_path / "simulation.json").read_text())
        assert summary["rates"]["nav_fail"] == 0.5

    def test_report_headline(self, tmp_path):
        result = fallchain("report", "--out", str(tmp_path), "--log-level", "error")
        assert result.returncode == 0, result.stderr
        assert "99.99851" in result.stdout
        document = json.loads((tmp_path / "report.json").read_text())
        assert document["sections"]["reliability"]["failure"] == pytest.approx(1.48635e-5)

    def test_validation_error_exit_code(self, tmp_path):
        result = fallchain("simulate", "--runs", "0", "--out", str(tmp_path))
        assert result.returncode == 1
        assert "batch size" in result.stderr
