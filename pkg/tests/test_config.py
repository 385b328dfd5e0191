from __future__ import annotations

import json

import pytest

from branchwork.backends import BackendConfig
from branchwork.config import (
    ConfigError,
    MemoryCaps,
    RunConfig,
    apply_overrides,
    load_run_config,
    load_task_spec,
)
from branchwork.tree import MetricDirection


def write_task(tmp_path, **overrides):
    data = {
        "task_id": "t1",
        "description": "predict things",
        "metric_name": "auc",
        "metric_direction": "maximize",
        "data_dir": str(tmp_path),
    }
    data.update(overrides)
    path = tmp_path / "task.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestLoadTaskSpec:
    def test_minimal_valid_spec_loads(self, tmp_path):
        task = load_task_spec(write_task(tmp_path))
        assert task.task_id == "t1"
        assert task.metric_direction is MetricDirection.MAXIMIZE
        assert task.interpreter_command == "python3"

    def test_missing_direction_is_a_field_error(self, tmp_path):
        path = write_task(tmp_path)
        data = json.loads(path.read_text())
        del data["metric_direction"]
        path.write_text(json.dumps(data), encoding="utf-8")
        with pytest.raises(ConfigError) as excinfo:
            load_task_spec(path)
        assert any("metric_direction" in e for e in excinfo.value.errors)

    def test_bad_direction_value_is_reported(self, tmp_path):
        with pytest.raises(ConfigError) as excinfo:
            load_task_spec(write_task(tmp_path, metric_direction="upward"))
        assert any("maximize" in e for e in excinfo.value.errors)

    def test_absent_data_dir_is_a_load_error(self, tmp_path):
        with pytest.raises(ConfigError) as excinfo:
            load_task_spec(write_task(tmp_path, data_dir=str(tmp_path / "nope")))
        assert any("data_dir" in e for e in excinfo.value.errors)

    def test_multiple_errors_reported_together(self, tmp_path):
        with pytest.raises(ConfigError) as excinfo:
            load_task_spec(write_task(tmp_path, task_id="", description=""))
        assert len(excinfo.value.errors) >= 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_task_spec(tmp_path / "ghost.json")


class TestRunConfig:
    def test_defaults_match_reference_operating_point(self):
        config = RunConfig()
        assert config.t_improve == 0.001
        assert config.tau_improve == 3
        assert config.tau_debug == 20
        assert config.debug_chain_cap == 3
        assert config.num_workers == 3
        assert config.c_uct == pytest.approx(1.414)
        assert config.effective_top_k == 3
        assert config.wall_clock_limit == 12 * 3600.0

    def test_round_trip_serialization(self):
        config = RunConfig(seed=9, top_k=2, max_steps=50)
        assert RunConfig.from_dict(config.to_dict()) == config

    def test_round_trip_with_backend(self):
        backend = BackendConfig(endpoint_url="http://x/v1", model_name="m")
        config = RunConfig(backend=backend)
        restored = RunConfig.from_dict(config.to_dict())
        assert restored.backend == backend
        assert not restored.simulated

    def test_validation_rejects_nonpositive_values(self):
        with pytest.raises(ConfigError):
            RunConfig(num_workers=0).validate()
        with pytest.raises(ConfigError):
            RunConfig(t_improve=-1.0).validate()
        with pytest.raises(ConfigError):
            RunConfig(memory_caps=MemoryCaps(context_chars=5)).validate()

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 4, "num_workers": 2}), encoding="utf-8")
        config = load_run_config(path)
        assert config.seed == 4 and config.num_workers == 2
        assert config.tau_debug == 20  # defaults fill the rest

    def test_cli_overrides_beat_file_values(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 4, "wall_clock_limit": 100.0}), encoding="utf-8")
        config = apply_overrides(load_run_config(path), seed=9, wall_clock_limit=None)
        assert config.seed == 9  # flag wins
        assert config.wall_clock_limit == 100.0  # file value survives a None flag

    def test_override_validation_still_applies(self):
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), num_workers=-3)
