"""Run reports: best-solution selection, the improvement curve, and exports.

The report path writes three files next to each other: ``report.json`` (the
full report), ``improvement_curve.csv`` (delimited best-so-far points), and
``improvement_curve.png`` (the rendered figure). ``export_best`` writes the
winning solution as a standalone bundle.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .journal import JournalEvent, KIND_BUDGET_END, KIND_HEADER, replay_tree
from .tree import MetricValue, NodeStatus, SearchTree

logger = logging.getLogger(__name__)

__all__ = ["RunReport", "derive_report", "write_report_files", "export_best"]


@dataclass
class RunReport:
    """Summary of one finished run."""

    run_id: str
    task_id: str
    best_node_id: Optional[int]
    best_metric: Optional[MetricValue]
    valid_submission: bool
    improvement_curve: list[tuple[float, float]] = field(default_factory=list)
    node_counts_by_status: dict[str, int] = field(default_factory=dict)
    node_counts_by_action: dict[str, int] = field(default_factory=dict)
    total_generations: int = 0
    total_executions: int = 0
    total_nodes: int = 0
    elapsed: float = 0.0
    budget_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "task_id": self.task_id,
            "best_node_id": self.best_node_id,
            "best_metric": self.best_metric.to_dict() if self.best_metric else None,
            "valid_submission": self.valid_submission,
            "improvement_curve": [[t, v] for t, v in self.improvement_curve],
            "node_counts_by_status": self.node_counts_by_status,
            "node_counts_by_action": self.node_counts_by_action,
            "total_generations": self.total_generations,
            "total_executions": self.total_executions,
            "total_nodes": self.total_nodes,
            "elapsed": self.elapsed,
            "budget_reason": self.budget_reason,
        }


def _best_node(tree: SearchTree) -> Optional[int]:
    """Best direction-normalized metric among valid nodes; ties go to the
    earliest-created node."""
    best_id: Optional[int] = None
    best: Optional[MetricValue] = None
    for node in sorted(tree.all_nodes(), key=lambda n: n.id):
        if node.is_root or node.health is not NodeStatus.VALID or node.metric is None:
            continue
        if best is None or node.metric.better_than(best):
            best = node.metric
            best_id = node.id
    return best_id


def derive_report(
    events: Iterable[JournalEvent], *, tree: Optional[SearchTree] = None
) -> RunReport:
    """Build the report from journal events (replaying the tree if not given)."""
    events = list(events)
    state = replay_tree(events)
    final_tree = tree if tree is not None else state.tree
    header = next((e.payload for e in events if e.kind == KIND_HEADER), {})
    budget = next((e.payload for e in events if e.kind == KIND_BUDGET_END), {})
    last_ts = events[-1].ts if events else 0.0
    best_id = _best_node(final_tree)
    best_metric = final_tree.node(best_id).metric if best_id is not None else None
    return RunReport(
        run_id=header.get("run_id", ""),
        task_id=header.get("task", {}).get("task_id", ""),
        best_node_id=best_id,
        best_metric=best_metric,
        valid_submission=best_id is not None,
        improvement_curve=list(state.improvement_curve),
        node_counts_by_status=final_tree.counts_by_status(),
        node_counts_by_action=final_tree.counts_by_action(),
        total_generations=state.generation_count,
        total_executions=state.execution_count,
        total_nodes=len(final_tree) - 1,
        elapsed=last_ts,
        budget_reason=budget.get("reason", ""),
    )


def write_report_files(report: RunReport, out_dir: str | Path) -> list[Path]:
    """Write report.json, the curve CSV, and the curve figure; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    report_path = out / "report.json"
    report_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(report_path)

    csv_path = out / "improvement_curve.csv"
    lines = ["elapsed,best_metric"]
    lines.extend(f"{t},{v}" for t, v in report.improvement_curve)
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(csv_path)

    png_path = out / "improvement_curve.png"
    _plot_curve(report, png_path)
    written.append(png_path)
    return written


def _plot_curve(report: RunReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    if report.improvement_curve:
        xs = [t for t, _ in report.improvement_curve]
        ys = [v for _, v in report.improvement_curve]
        ax.step(xs, ys, where="post", marker="o")
    else:
        ax.text(0.5, 0.5, "no valid solution", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("elapsed (s)")
    ax.set_ylabel("best metric so far")
    ax.set_title(f"{report.task_id or 'run'} — best solution over time")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def export_best(
    events: Iterable[JournalEvent],
    out_dir: str | Path,
    *,
    run_dir: Optional[str | Path] = None,
) -> dict:
    """Write the best node's solution bundle: code, plan, metadata, artifact.

    The submission artifact is copied from the node's workspace when it still
    exists; otherwise the bundle is written anyway with a warning flag in the
    metadata.
    """
    events = list(events)
    state = replay_tree(events)
    best_id = _best_node(state.tree)
    if best_id is None:
        raise ValueError("no valid node to export")
    node = state.tree.node(best_id)
    header = next((e.payload for e in events if e.kind == KIND_HEADER), {})
    submission_rel = header.get("task", {}).get("submission_path", "output/submission.csv")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "solution.py").write_text(node.code, encoding="utf-8")
    (out / "plan.md").write_text(node.plan or "(no plan recorded)\n", encoding="utf-8")

    submission_missing = True
    if run_dir is not None:
        safe = node.key.replace("/", "_")
        artifact = Path(run_dir) / "nodes" / safe / submission_rel
        if artifact.exists():
            shutil.copy(artifact, out / Path(submission_rel).name)
            submission_missing = False
    if submission_missing:
        logger.warning("export: submission artifact not found for node %s", best_id)

    metadata = {
        "node_id": node.id,
        "node_key": node.key,
        "action": node.action.value if node.action else None,
        "metric": node.metric.to_dict() if node.metric else None,
        "submission_missing": submission_missing,
        "run_id": header.get("run_id", ""),
    }
    (out / "metadata.json").write_text(
        json.dumps(metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return metadata
