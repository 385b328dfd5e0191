"""Run candidate solutions in an isolated workspace and classify the outcome.

A solution is a script. It runs as a child process confined to its workspace
directory, with bounded log capture, a hard timeout, and a submission-artifact
check. The outcome maps totally onto the defect predicate used for rewards:
every result is either healthy or carries exactly one failure kind.
"""

from __future__ import annotations

import logging
import os
import re
import signal
import subprocess
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from .tree import MetricDirection, MetricValue

logger = logging.getLogger(__name__)

__all__ = [
    "ExitStatus",
    "ExecutionResult",
    "Workspace",
    "execute",
    "parse_metric",
    "failure_kind",
    "configure_execution_cap",
]

TAIL_CHARS = 4000
DEFAULT_GRACE = 5.0

# Global cap on concurrently running child processes.
_exec_slots = threading.BoundedSemaphore(4)


def configure_execution_cap(limit: int) -> None:
    global _exec_slots
    if limit < 1:
        raise ValueError("execution cap must be at least 1")
    _exec_slots = threading.BoundedSemaphore(limit)


class ExitStatus(str, Enum):
    SUCCESS = "success"
    NONZERO_EXIT = "nonzero-exit"
    TIMEOUT = "timeout"
    SETUP_FAILURE = "setup-failure"


@dataclass(frozen=True)
class ExecutionResult:
    """Outcome of running one candidate solution."""

    exit_status: ExitStatus
    stdout_tail: str
    stderr_tail: str
    metric: Optional[MetricValue]
    submission_present: bool
    wall_time: float

    @property
    def is_success(self) -> bool:
        return self.exit_status is ExitStatus.SUCCESS

    def to_dict(self) -> dict:
        return {
            "exit_status": self.exit_status.value,
            "stdout_tail": self.stdout_tail,
            "stderr_tail": self.stderr_tail,
            "metric": self.metric.to_dict() if self.metric else None,
            "submission_present": self.submission_present,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionResult":
        metric = data.get("metric")
        return cls(
            exit_status=ExitStatus(data["exit_status"]),
            stdout_tail=data["stdout_tail"],
            stderr_tail=data["stderr_tail"],
            metric=MetricValue.from_dict(metric) if metric else None,
            submission_present=data["submission_present"],
            wall_time=data["wall_time"],
        )


def failure_kind(result: Optional[ExecutionResult]) -> Optional[str]:
    """Classify a result into the defect taxonomy; None means healthy.

    Every possible result maps to exactly one verdict, so the defect predicate
    is total: healthy iff this returns None.
    """
    if result is None:
        return "generation-failure"
    if result.exit_status is ExitStatus.TIMEOUT:
        return "timeout"
    if result.exit_status is ExitStatus.SETUP_FAILURE:
        return "setup-failure"
    if result.exit_status is ExitStatus.NONZERO_EXIT:
        return "runtime-error"
    if not result.submission_present:
        return "missing-submission"
    if result.metric is None:
        return "metric-parse-failure"
    return None


@dataclass
class Workspace:
    """Per-execution directory layout.

    ``input_data_dir`` is shared, read-only by convention; everything a
    solution writes must land under ``root_dir``.
    """

    root_dir: Path
    input_data_dir: Path
    output_dir: Path
    scratch_dir: Path
    logs_dir: Path

    @classmethod
    def create(cls, root_dir: Path, input_data_dir: Path) -> "Workspace":
        # Absolute paths throughout: the child runs with the workspace as its
        # cwd, so relative paths would resolve twice.
        root_dir = Path(root_dir).resolve()
        ws = cls(
            root_dir=root_dir,
            input_data_dir=Path(input_data_dir).resolve(),
            output_dir=root_dir / "output",
            scratch_dir=root_dir / "scratch",
            logs_dir=root_dir / "logs",
        )
        for directory in (ws.root_dir, ws.output_dir, ws.scratch_dir, ws.logs_dir):
            directory.mkdir(parents=True, exist_ok=True)
        return ws


def parse_metric(
    stdout: str,
    pattern: str | re.Pattern[str],
    direction: MetricDirection = MetricDirection.MAXIMIZE,
) -> Optional[MetricValue]:
    """Extract the score from stdout; the last matching line wins.

    The pattern must capture the numeric value in group 1. Returns None when
    nothing matches or the captured text is not a number.
    """
    matcher = re.compile(pattern) if isinstance(pattern, str) else pattern
    value: Optional[float] = None
    for line in stdout.splitlines():
        found = matcher.search(line)
        if not found:
            continue
        try:
            value = float(found.group(1))
        except (ValueError, IndexError):
            continue
    if value is None:
        return None
    return MetricValue(value=value, direction=direction)


def _tail(text: str, limit: int = TAIL_CHARS) -> str:
    return text if len(text) <= limit else text[-limit:]


def execute(
    code: str,
    workspace: Workspace,
    timeout: float,
    *,
    interpreter_command: str = "python3",
    metric_pattern: str = r"validation_metric:\s*([-+0-9.eE]+)",
    metric_direction: MetricDirection = MetricDirection.MAXIMIZE,
    submission_path: str = "output/submission.csv",
    grace: float = DEFAULT_GRACE,
) -> ExecutionResult:
    """Run one solution script inside its workspace.

    The child gets the workspace as its working directory, a trimmed
    environment pointing INPUT_DIR/OUTPUT_DIR at the conventional locations,
    and is killed (whole process group) once the timeout passes. Full
    stdout/stderr go to the workspace ``logs/`` directory; the result keeps
    bounded tails. The metric is parsed from stdout only on a clean exit, and
    success additionally requires the submission artifact to exist.
    """
    if not code.strip():
        raise ValueError("refusing to execute empty code")
    started = time.monotonic()
    script_path = workspace.root_dir / "solution.py"
    try:
        script_path.write_text(code, encoding="utf-8")
    except OSError as exc:
        return ExecutionResult(
            exit_status=ExitStatus.SETUP_FAILURE,
            stdout_tail="",
            stderr_tail=f"workspace setup failed: {exc}",
            metric=None,
            submission_present=False,
            wall_time=time.monotonic() - started,
        )

    env = {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "HOME": str(workspace.scratch_dir),
        "TMPDIR": str(workspace.scratch_dir),
        "INPUT_DIR": str(workspace.input_data_dir),
        "OUTPUT_DIR": str(workspace.output_dir),
        "PYTHONDONTWRITEBYTECODE": "1",
        "PYTHONUNBUFFERED": "1",
    }
    cmd = interpreter_command.split() + [str(script_path)]

    timed_out = False
    with _exec_slots:
        try:
            proc = subprocess.Popen(
                cmd,
                cwd=workspace.root_dir,
                env=env,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                start_new_session=True,
            )
        except (OSError, ValueError) as exc:
            return ExecutionResult(
                exit_status=ExitStatus.SETUP_FAILURE,
                stdout_tail="",
                stderr_tail=f"interpreter launch failed: {exc}",
                metric=None,
                submission_present=False,
                wall_time=time.monotonic() - started,
            )
        try:
            stdout, stderr = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            _terminate_group(proc, grace)
            stdout, stderr = proc.communicate()
    wall_time = time.monotonic() - started

    (workspace.logs_dir / "stdout.log").write_text(stdout or "", encoding="utf-8")
    (workspace.logs_dir / "stderr.log").write_text(stderr or "", encoding="utf-8")

    submission_present = (workspace.root_dir / submission_path).exists()
    if timed_out:
        status = ExitStatus.TIMEOUT
    elif proc.returncode == 0:
        status = ExitStatus.SUCCESS
    else:
        status = ExitStatus.NONZERO_EXIT
    metric = None
    if status is ExitStatus.SUCCESS:
        metric = parse_metric(stdout or "", metric_pattern, metric_direction)
    return ExecutionResult(
        exit_status=status,
        stdout_tail=_tail(stdout or ""),
        stderr_tail=_tail(stderr or ""),
        metric=metric,
        submission_present=submission_present,
        wall_time=wall_time,
    )


def _terminate_group(proc: subprocess.Popen, grace: float) -> None:
    """TERM the child's process group, escalate to KILL after the grace period."""
    try:
        os.killpg(proc.pid, signal.SIGTERM)
    except (ProcessLookupError, PermissionError):
        return
    deadline = time.monotonic() + grace
    while time.monotonic() < deadline:
        if proc.poll() is not None:
            return
        time.sleep(0.05)
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass
    logger.warning("execution killed after exceeding timeout + grace")
