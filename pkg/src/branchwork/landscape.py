"""Seeded synthetic task landscape: a deterministic stand-in for real execution.

Outcomes are a pure function of (seed, lineage path). Each path segment draws
its own PRNG from a sha256 of the seed and the path prefix, so sibling
attempts differ, reruns are bit-identical, and a node's outcome never depends
on traversal order. Virtual generation/execution durations come from the same
mechanism, which is what makes whole parallel runs replayable.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .sandbox import ExecutionResult, ExitStatus
from .tree import ActionKind, MetricDirection, MetricValue

__all__ = [
    "Distribution",
    "SyntheticLandscape",
    "simulate_execute",
    "simulate_durations",
    "parse_path_key",
    "SimulatedEvaluator",
]

_LETTER_TO_ACTION = {"d": ActionKind.DRAFT, "b": ActionKind.DEBUG, "i": ActionKind.IMPROVE}

PathSegment = tuple[ActionKind, int]


@dataclass(frozen=True)
class Distribution:
    """Small parametric distribution: fixed value, uniform range, or normal."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        expected = {"fixed": 1, "uniform": 2, "normal": 2}
        if self.kind not in expected:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if len(self.params) != expected[self.kind]:
            raise ValueError(f"{self.kind} takes {expected[self.kind]} parameter(s)")

    @classmethod
    def fixed(cls, value: float) -> "Distribution":
        return cls("fixed", (value,))

    @classmethod
    def uniform(cls, low: float, high: float) -> "Distribution":
        return cls("uniform", (low, high))

    @classmethod
    def normal(cls, mean: float, std: float) -> "Distribution":
        return cls("normal", (mean, std))

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.params[0]
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1])
        return rng.normalvariate(self.params[0], self.params[1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "Distribution":
        return cls(kind=data["kind"], params=tuple(float(p) for p in data["params"]))


def _default_bug_probabilities() -> dict[ActionKind, float]:
    return {ActionKind.DRAFT: 0.35, ActionKind.DEBUG: 0.0, ActionKind.IMPROVE: 0.2}


@dataclass(frozen=True)
class SyntheticLandscape:
    """Parameters of the simulated task.

    ``bug_probability_by_action`` covers drafts and improves; debug outcomes
    are governed by ``debug_fix_probability`` instead (a failed fix stays
    buggy). Improvement deltas are sampled in normalized space, so a positive
    delta is an improvement under either metric direction.
    """

    seed: int = 0
    bug_probability_by_action: dict[ActionKind, float] = field(
        default_factory=_default_bug_probabilities
    )
    debug_fix_probability: float = 0.5
    improvement_distribution: Distribution = Distribution.normal(0.05, 0.02)
    draft_metric_distribution: Distribution = Distribution.uniform(0.3, 0.6)
    generation_duration: Distribution = Distribution.uniform(0.8, 2.4)
    execution_duration: Distribution = Distribution.uniform(0.5, 3.0)

    def bug_probability(self, action: ActionKind) -> float:
        return self.bug_probability_by_action.get(action, 0.0)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "bug_probability_by_action": {
                action.value: prob for action, prob in self.bug_probability_by_action.items()
            },
            "debug_fix_probability": self.debug_fix_probability,
            "improvement_distribution": self.improvement_distribution.to_dict(),
            "draft_metric_distribution": self.draft_metric_distribution.to_dict(),
            "generation_duration": self.generation_duration.to_dict(),
            "execution_duration": self.execution_duration.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticLandscape":
        return cls(
            seed=int(data["seed"]),
            bug_probability_by_action={
                ActionKind(name): float(prob)
                for name, prob in data["bug_probability_by_action"].items()
            },
            debug_fix_probability=float(data["debug_fix_probability"]),
            improvement_distribution=Distribution.from_dict(data["improvement_distribution"]),
            draft_metric_distribution=Distribution.from_dict(data["draft_metric_distribution"]),
            generation_duration=Distribution.from_dict(data["generation_duration"]),
            execution_duration=Distribution.from_dict(data["execution_duration"]),
        )


def parse_path_key(key: str) -> list[PathSegment]:
    """Decode a lineage key like ``d0/i1/b0`` into (action, slot) segments."""
    if not key:
        return []
    segments: list[PathSegment] = []
    for part in key.split("/"):
        try:
            segments.append((_LETTER_TO_ACTION[part[0]], int(part[1:])))
        except (KeyError, ValueError, IndexError):
            raise ValueError(f"malformed path key segment {part!r}") from None
    return segments


def path_key(path: Sequence[PathSegment]) -> str:
    return "/".join(f"{action.key_letter}{slot}" for action, slot in path)


def _segment_rng(seed: int, key: str, label: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}|{key}|{label}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class _SimState:
    buggy: bool
    metric_norm: Optional[float]
    last_metric_norm: Optional[float]


def _walk(path: Sequence[PathSegment], landscape: SyntheticLandscape) -> _SimState:
    state = _SimState(buggy=False, metric_norm=None, last_metric_norm=None)
    prefix: list[PathSegment] = []
    for action, slot in path:
        prefix.append((action, slot))
        key = path_key(prefix)
        rng = _segment_rng(landscape.seed, key, "outcome")
        if action is ActionKind.DRAFT:
            buggy = rng.random() < landscape.bug_probability(ActionKind.DRAFT)
            metric = None if buggy else landscape.draft_metric_distribution.sample(rng)
        elif action is ActionKind.DEBUG:
            fixed = rng.random() < landscape.debug_fix_probability
            if fixed:
                buggy = False
                metric = (
                    state.last_metric_norm
                    if state.last_metric_norm is not None
                    else landscape.draft_metric_distribution.sample(rng)
                )
            else:
                buggy = True
                metric = None
        else:
            buggy = rng.random() < landscape.bug_probability(ActionKind.IMPROVE)
            if buggy:
                metric = None
            else:
                base = state.metric_norm if state.metric_norm is not None else 0.0
                metric = base + landscape.improvement_distribution.sample(rng)
        last = metric if metric is not None else state.last_metric_norm
        state = _SimState(buggy=buggy, metric_norm=metric, last_metric_norm=last)
    return state


_FAKE_TRACEBACK = (
    "Traceback (most recent call last):\n"
    '  File "solution.py", line 17, in <module>\n'
    "    model.fit(train)\n"
    "ValueError: synthetic failure at {key}\n"
)


def simulate_execute(
    path: Sequence[PathSegment] | str,
    landscape: SyntheticLandscape,
    *,
    direction: MetricDirection = MetricDirection.MAXIMIZE,
) -> ExecutionResult:
    """Deterministic simulated run of the node identified by its lineage path.

    The whole lineage is replayed from the root, so a call needs no tree
    state: identical (seed, path) pairs give identical outcomes.
    """
    segments = parse_path_key(path) if isinstance(path, str) else list(path)
    if not segments:
        raise ValueError("cannot simulate the root: the path is empty")
    key = path_key(segments)
    state = _walk(segments, landscape)
    _, exec_duration = simulate_durations(segments, landscape)
    if state.buggy:
        return ExecutionResult(
            exit_status=ExitStatus.NONZERO_EXIT,
            stdout_tail=f"[sim] running candidate {key}\n",
            stderr_tail=_FAKE_TRACEBACK.format(key=key),
            metric=None,
            submission_present=False,
            wall_time=exec_duration,
        )
    assert state.metric_norm is not None
    value = state.metric_norm if direction is MetricDirection.MAXIMIZE else -state.metric_norm
    return ExecutionResult(
        exit_status=ExitStatus.SUCCESS,
        stdout_tail=(
            f"[sim] running candidate {key}\n"
            f"validation_metric: {value:.6f}\n"
        ),
        stderr_tail="",
        metric=MetricValue(value=round(value, 6), direction=direction),
        submission_present=True,
        wall_time=exec_duration,
    )


def simulate_durations(
    path: Sequence[PathSegment] | str, landscape: SyntheticLandscape
) -> tuple[float, float]:
    """Deterministic (generation, execution) durations for a node, in virtual seconds."""
    segments = parse_path_key(path) if isinstance(path, str) else list(path)
    key = path_key(segments)
    gen_rng = _segment_rng(landscape.seed, key, "gen-duration")
    exec_rng = _segment_rng(landscape.seed, key, "exec-duration")
    gen = max(landscape.generation_duration.sample(gen_rng), 1e-6)
    exe = max(landscape.execution_duration.sample(exec_rng), 1e-6)
    return gen, exe


class SimulatedEvaluator:
    """Evaluator backed by a synthetic landscape (ignores the actual code)."""

    def __init__(self, landscape: SyntheticLandscape, direction: MetricDirection) -> None:
        self.landscape = landscape
        self.direction = direction

    def evaluate(self, key: str, action: ActionKind, code: str) -> ExecutionResult:
        return simulate_execute(key, self.landscape, direction=self.direction)

    def durations(self, key: str) -> tuple[float, float]:
        return simulate_durations(key, self.landscape)
