from __future__ import annotations

from pathlib import Path

import pytest

from branchwork.config import RunConfig, TaskSpec
from branchwork.landscape import Distribution, SyntheticLandscape
from branchwork.tree import ActionKind, MetricDirection


def make_task(direction: MetricDirection = MetricDirection.MAXIMIZE, **overrides) -> TaskSpec:
    fields = dict(
        task_id="demo-task",
        description="Predict the target column from the tabular features.",
        metric_name="validation_metric",
        metric_direction=direction,
        data_dir=Path("."),
    )
    fields.update(overrides)
    return TaskSpec(**fields)


def make_landscape(seed: int = 0, **overrides) -> SyntheticLandscape:
    fields = dict(
        seed=seed,
        bug_probability_by_action={ActionKind.DRAFT: 0.35, ActionKind.IMPROVE: 0.2},
        debug_fix_probability=0.5,
        improvement_distribution=Distribution.normal(0.05, 0.02),
        draft_metric_distribution=Distribution.uniform(0.3, 0.6),
    )
    fields.update(overrides)
    return SyntheticLandscape(**fields)


def make_config(seed: int = 0, **overrides) -> RunConfig:
    fields = dict(
        seed=seed,
        wall_clock_limit=1e6,
        max_steps=30,
        landscape=make_landscape(seed),
    )
    fields.update(overrides)
    return RunConfig(**fields)


@pytest.fixture
def task() -> TaskSpec:
    return make_task()
