"""Task and run configuration: schemas, defaults, loading, and precedence.

Command-line flags override config-file values, which override the built-in
defaults. The search hyperparameter defaults are the reference operating
point: improve threshold 0.001 with tolerance 3, debug depth limit 20 with
per-visit debug sequences of 3, and 3 parallel workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from .backends import BackendConfig, DecodingParams
from .landscape import SyntheticLandscape
from .tree import MetricDirection

__all__ = [
    "ConfigError",
    "MemoryCaps",
    "TaskSpec",
    "RunConfig",
    "load_task_spec",
    "load_run_config",
    "apply_overrides",
]


class ConfigError(Exception):
    """Configuration rejected; ``errors`` lists field-level messages."""

    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class MemoryCaps:
    insight_chars: int = 1500
    log_lines: int = 50
    context_chars: int = 6000

    def to_dict(self) -> dict:
        return {
            "insight_chars": self.insight_chars,
            "log_lines": self.log_lines,
            "context_chars": self.context_chars,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MemoryCaps":
        return cls(
            insight_chars=int(data.get("insight_chars", 1500)),
            log_lines=int(data.get("log_lines", 50)),
            context_chars=int(data.get("context_chars", 6000)),
        )


@dataclass(frozen=True)
class TaskSpec:
    """One machine-learning task: what to solve and how runs are scored."""

    task_id: str
    description: str
    metric_name: str
    metric_direction: MetricDirection
    data_dir: Path
    metric_pattern: str = r"validation_metric:\s*([-+0-9.eE]+)"
    interpreter_command: str = "python3"
    submission_path: str = "output/submission.csv"

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "description": self.description,
            "metric_name": self.metric_name,
            "metric_direction": self.metric_direction.value,
            "metric_pattern": self.metric_pattern,
            "interpreter_command": self.interpreter_command,
            "submission_path": self.submission_path,
            "data_dir": str(self.data_dir),
        }


_TASK_REQUIRED = (
    "task_id",
    "description",
    "metric_name",
    "metric_direction",
    "data_dir",
)


def load_task_spec(path: str | Path) -> TaskSpec:
    """Load and validate a task file, reporting every field problem at once."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"task file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"task file is not valid JSON: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["task file must contain a JSON object"])
    errors = []
    for name in _TASK_REQUIRED:
        if not str(data.get(name) or "").strip():
            errors.append(f"{name}: required and must be non-empty")
    direction: Optional[MetricDirection] = None
    raw_direction = data.get("metric_direction")
    if raw_direction:
        try:
            direction = MetricDirection(str(raw_direction).lower())
        except ValueError:
            errors.append(
                f"metric_direction: must be 'maximize' or 'minimize', got {raw_direction!r}"
            )
    data_dir = Path(str(data.get("data_dir", "")))
    if str(data.get("data_dir") or "").strip() and not data_dir.is_dir():
        errors.append(f"data_dir: directory does not exist: {data_dir}")
    if errors:
        raise ConfigError(errors)
    assert direction is not None
    return TaskSpec(
        task_id=str(data["task_id"]),
        description=str(data["description"]),
        metric_name=str(data["metric_name"]),
        metric_direction=direction,
        data_dir=data_dir,
        metric_pattern=str(data.get("metric_pattern", TaskSpec.metric_pattern)),
        interpreter_command=str(data.get("interpreter_command", TaskSpec.interpreter_command)),
        submission_path=str(data.get("submission_path", TaskSpec.submission_path)),
    )


@dataclass(frozen=True)
class RunConfig:
    """All search hyperparameters and budgets for one run."""

    c_uct: float = 1.414
    t_improve: float = 0.001
    tau_improve: int = 3
    tau_debug: int = 20
    debug_chain_cap: int = 3
    num_workers: int = 3
    top_k: Optional[int] = None
    max_children: int = 3
    wall_clock_limit: float = 12 * 3600.0
    per_exec_timeout: float = 600.0
    max_steps: Optional[int] = None
    memory_caps: MemoryCaps = field(default_factory=MemoryCaps)
    seed: int = 0
    backend: Optional[BackendConfig] = None
    landscape: SyntheticLandscape = field(default_factory=SyntheticLandscape)
    decoding: DecodingParams = field(default_factory=DecodingParams)

    @property
    def effective_top_k(self) -> int:
        return self.top_k if self.top_k is not None else self.num_workers

    @property
    def simulated(self) -> bool:
        return self.backend is None

    def validate(self) -> None:
        errors = []
        positives = {
            "c_uct": self.c_uct,
            "t_improve": self.t_improve,
            "tau_improve": self.tau_improve,
            "tau_debug": self.tau_debug,
            "debug_chain_cap": self.debug_chain_cap,
            "num_workers": self.num_workers,
            "max_children": self.max_children,
            "wall_clock_limit": self.wall_clock_limit,
            "per_exec_timeout": self.per_exec_timeout,
        }
        for name, value in positives.items():
            if value <= 0:
                errors.append(f"{name}: must be positive, got {value}")
        if self.top_k is not None and self.top_k < 1:
            errors.append(f"top_k: must be positive, got {self.top_k}")
        if self.max_steps is not None and self.max_steps < 1:
            errors.append(f"max_steps: must be positive, got {self.max_steps}")
        # One full memory entry must fit the context budget, or eviction could
        # never terminate below the cap.
        entry_bound = self.memory_caps.insight_chars + 90 * self.memory_caps.log_lines + 400
        if self.memory_caps.context_chars < min(entry_bound, 2000):
            errors.append(
                "memory_caps.context_chars: too small to hold a single memory entry"
            )
        if errors:
            raise ConfigError(errors)

    def to_dict(self) -> dict:
        return {
            "c_uct": self.c_uct,
            "t_improve": self.t_improve,
            "tau_improve": self.tau_improve,
            "tau_debug": self.tau_debug,
            "debug_chain_cap": self.debug_chain_cap,
            "num_workers": self.num_workers,
            "top_k": self.top_k,
            "max_children": self.max_children,
            "wall_clock_limit": self.wall_clock_limit,
            "per_exec_timeout": self.per_exec_timeout,
            "max_steps": self.max_steps,
            "memory_caps": self.memory_caps.to_dict(),
            "seed": self.seed,
            "backend": self.backend.to_dict() if self.backend else None,
            "landscape": self.landscape.to_dict(),
            "decoding": self.decoding.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        backend = data.get("backend")
        config = cls(
            c_uct=float(data.get("c_uct", 1.414)),
            t_improve=float(data.get("t_improve", 0.001)),
            tau_improve=int(data.get("tau_improve", 3)),
            tau_debug=int(data.get("tau_debug", 20)),
            debug_chain_cap=int(data.get("debug_chain_cap", 3)),
            num_workers=int(data.get("num_workers", 3)),
            top_k=None if data.get("top_k") is None else int(data["top_k"]),
            max_children=int(data.get("max_children", 3)),
            wall_clock_limit=float(data.get("wall_clock_limit", 12 * 3600.0)),
            per_exec_timeout=float(data.get("per_exec_timeout", 600.0)),
            max_steps=None if data.get("max_steps") is None else int(data["max_steps"]),
            memory_caps=MemoryCaps.from_dict(data.get("memory_caps", {})),
            seed=int(data.get("seed", 0)),
            backend=BackendConfig.from_dict(backend) if backend else None,
            landscape=SyntheticLandscape.from_dict(data["landscape"])
            if data.get("landscape")
            else SyntheticLandscape(),
            decoding=DecodingParams.from_dict(data.get("decoding", {})),
        )
        config.validate()
        return config


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file is not valid JSON: {exc}"]) from None
    if not isinstance(data, dict):
        raise ConfigError(["config file must contain a JSON object"])
    return RunConfig.from_dict(data)


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Apply non-None keyword overrides (the CLI layer) on top of a config."""
    changes = {name: value for name, value in overrides.items() if value is not None}
    if not changes:
        return config
    updated = replace(config, **changes)
    updated.validate()
    return updated
