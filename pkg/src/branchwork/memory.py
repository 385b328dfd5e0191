"""Curated exploration memory fed into the generator's reasoning channel.

For each expansion the memory holds at most: the (insight, feedback) pair of
the immediate parent, plus the pairs of verified nodes at the same depth in
other root branches. Lineage continuity comes from the parent entry; the
sibling entries are contrastive ("these were already tried elsewhere").
Deeper ancestors and same-branch cousins are deliberately excluded.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

from .sandbox import ExecutionResult, failure_kind
from .tree import ROOT_ID, ActionKind, MetricValue, SearchTree, SolutionNode

if TYPE_CHECKING:
    from .config import TaskSpec

__all__ = [
    "InsightRecord",
    "FeedbackRecord",
    "Diagnostics",
    "ReasoningTrace",
    "MemoryEntry",
    "MemoryContext",
    "extract_insights",
    "collect_feedback",
    "build_memory",
    "render_context",
    "serialize_entry",
]

MEMORY_FORMAT_VERSION = 1

TAG_ANALYSIS = "analysis"
TAG_STRATEGY = "strategy"
TAG_DEBUG = "debug"
TAG_IMPROVEMENT = "improvement"

_SALIENT_LINE = re.compile(
    r"(?i)\b(strateg|decid|chose|choos|error|fail|bug|fix|metric|score|improv|tune|because)"
)
_ERROR_LINE = re.compile(r"(?i)(traceback|error|exception)")

THINK_SEED_HEADER = "=== exploration memory v1 ==="
THINK_SEED_FOOTER = "=== end memory ==="
LINEAGE_LABEL = "[lineage]"
PARALLEL_LABEL = "[parallel attempts — do not repeat these approaches]"


@dataclass(frozen=True)
class ReasoningTrace:
    """Raw model output split into the reasoning and answer channels.

    When the backend exposes a reasoning channel, ``raw`` is exactly
    ``think_section + answer_section``; otherwise the think section is empty.
    """

    raw: str
    think_section: str = ""
    answer_section: str = ""

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "think_section": self.think_section,
            "answer_section": self.answer_section,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReasoningTrace":
        return cls(
            raw=data["raw"],
            think_section=data.get("think_section", ""),
            answer_section=data.get("answer_section", ""),
        )


@dataclass(frozen=True)
class InsightRecord:
    """Bounded distillation of one reasoning trace."""

    source_node: int
    summary: str
    tags: tuple[str, ...]
    created_from: str

    def to_dict(self) -> dict:
        return {
            "source_node": self.source_node,
            "summary": self.summary,
            "tags": list(self.tags),
            "created_from": self.created_from,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InsightRecord":
        return cls(
            source_node=data["source_node"],
            summary=data["summary"],
            tags=tuple(data["tags"]),
            created_from=data["created_from"],
        )


@dataclass(frozen=True)
class Diagnostics:
    kind: str
    message: str
    location: Optional[str] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "message": self.message, "location": self.location}

    @classmethod
    def from_dict(cls, data: dict) -> "Diagnostics":
        return cls(kind=data["kind"], message=data["message"], location=data.get("location"))


@dataclass(frozen=True)
class FeedbackRecord:
    """Concrete execution evidence: score and/or failure diagnostics."""

    source_node: int
    metric: Optional[MetricValue]
    log_excerpt: str
    error_diagnostics: Optional[Diagnostics]

    def __post_init__(self) -> None:
        if self.metric is None and self.error_diagnostics is None:
            raise ValueError("feedback needs a metric or diagnostics")

    def to_dict(self) -> dict:
        return {
            "source_node": self.source_node,
            "metric": self.metric.to_dict() if self.metric else None,
            "log_excerpt": self.log_excerpt,
            "error_diagnostics": self.error_diagnostics.to_dict()
            if self.error_diagnostics
            else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeedbackRecord":
        metric = data.get("metric")
        diagnostics = data.get("error_diagnostics")
        return cls(
            source_node=data["source_node"],
            metric=MetricValue.from_dict(metric) if metric else None,
            log_excerpt=data["log_excerpt"],
            error_diagnostics=Diagnostics.from_dict(diagnostics) if diagnostics else None,
        )


@dataclass(frozen=True)
class MemoryEntry:
    """(insight, feedback) pair plus the bookkeeping the wire format needs."""

    insight: InsightRecord
    feedback: FeedbackRecord
    action: Optional[ActionKind]
    depth: int


@dataclass
class MemoryContext:
    """Scoped memory for one expansion: parent lineage + parallel siblings."""

    parent_entry: Optional[MemoryEntry]
    sibling_entries: list[MemoryEntry] = field(default_factory=list)
    depth: int = 0
    skipped: int = 0

    @property
    def entries(self) -> list[MemoryEntry]:
        out = [self.parent_entry] if self.parent_entry else []
        return out + list(self.sibling_entries)


def extract_insights(
    trace: ReasoningTrace, *, source_node: int, cap: int = 1500
) -> Optional[InsightRecord]:
    """Distill a reasoning trace into a bounded summary.

    Rule-based: keep the first paragraph, every line that names a decision,
    error, metric, or improvement direction, and the final paragraph, then
    truncate at the character cap. Empty traces yield the empty-insight signal
    (None) so memory construction can skip and count them. A model-based
    summarizer could replace this wholesale; nothing downstream would change.
    """
    if not trace.raw.strip():
        return None
    source = trace.think_section if trace.think_section.strip() else trace.raw
    paragraphs = [p.strip() for p in source.split("\n\n") if p.strip()]
    kept: list[str] = []
    if paragraphs:
        kept.append(paragraphs[0])
    salient = [line.strip() for line in source.splitlines() if _SALIENT_LINE.search(line)]
    for line in salient:
        if all(line not in block for block in kept):
            kept.append(line)
    if len(paragraphs) > 1 and all(paragraphs[-1] not in block for block in kept):
        kept.append(paragraphs[-1])
    summary = "\n".join(kept)[:cap]
    tags = [TAG_ANALYSIS]
    if re.search(r"(?i)strateg", source):
        tags.append(TAG_STRATEGY)
    if re.search(r"(?i)(error|bug|fix|traceback)", source):
        tags.append(TAG_DEBUG)
    if re.search(r"(?i)(improv|tune)", source):
        tags.append(TAG_IMPROVEMENT)
    return InsightRecord(
        source_node=source_node,
        summary=summary,
        tags=tuple(tags),
        created_from=hashlib.sha256(trace.raw.encode()).hexdigest()[:12],
    )


def collect_feedback(
    result: Optional[ExecutionResult],
    *,
    source_node: int,
    log_lines: int = 50,
    generation_error: Optional[str] = None,
) -> FeedbackRecord:
    """Condense an execution outcome into memory-sized feedback.

    Keeps the last ``log_lines`` log lines plus the first error-looking line
    (tracebacks concentrate at the tail, the trigger often appears earlier).
    When generation itself failed there is no execution result; the record
    then carries only the generation-failure diagnostics.
    """
    if result is None:
        return FeedbackRecord(
            source_node=source_node,
            metric=None,
            log_excerpt="",
            error_diagnostics=Diagnostics(
                kind="generation-failure", message=generation_error or "generation failed"
            ),
        )
    combined = result.stdout_tail
    if result.stderr_tail:
        combined = f"{combined}\n{result.stderr_tail}" if combined else result.stderr_tail
    lines = combined.splitlines()
    excerpt_lines = lines[-log_lines:]
    first_error = next((line for line in lines if _ERROR_LINE.search(line)), None)
    if first_error is not None and first_error not in excerpt_lines:
        excerpt_lines = [first_error, *excerpt_lines]
    kind = failure_kind(result)
    diagnostics = None
    if kind is not None:
        tail_line = next(
            (line for line in reversed(lines) if line.strip()), "no output captured"
        )
        diagnostics = Diagnostics(kind=kind, message=tail_line.strip())
    return FeedbackRecord(
        source_node=source_node,
        metric=result.metric,
        log_excerpt="\n".join(excerpt_lines),
        error_diagnostics=diagnostics,
    )


def _branch_root(tree: SearchTree, node: SolutionNode) -> Optional[int]:
    current = node
    while current.parent_id is not None and current.parent_id != ROOT_ID:
        current = tree.node(current.parent_id)
    return current.id if current.parent_id == ROOT_ID else None


def _entry_for(node: SolutionNode) -> Optional[MemoryEntry]:
    if node.insight is None or node.feedback is None:
        return None
    return MemoryEntry(
        insight=node.insight, feedback=node.feedback, action=node.action, depth=node.depth
    )


def build_memory(tree: SearchTree, parent_id: int) -> MemoryContext:
    """Memory for expanding a child under ``parent_id``.

    The parent entry is the expansion target's own (insight, feedback); the
    sibling entries come from verified nodes at the child's depth in *other*
    root branches, ordered by node id. Nodes missing either record are skipped
    and counted. A draft under the root gets no parent entry (the root holds
    no solution), and its siblings are the other drafts.
    """
    parent = tree.node(parent_id)
    child_depth = parent.depth + 1
    skipped = 0
    parent_entry = None
    if not parent.is_root:
        parent_entry = _entry_for(parent)
        if parent_entry is None:
            skipped += 1
    own_branch = _branch_root(tree, parent) if not parent.is_root else None
    siblings: list[MemoryEntry] = []
    for node in sorted(tree.all_nodes(), key=lambda n: n.id):
        if node.is_root or node.depth != child_depth:
            continue
        if own_branch is not None and _branch_root(tree, node) == own_branch:
            continue
        entry = _entry_for(node)
        if entry is None:
            skipped += 1
            continue
        siblings.append(entry)
    return MemoryContext(
        parent_entry=parent_entry, sibling_entries=siblings, depth=child_depth, skipped=skipped
    )


def serialize_entry(entry: MemoryEntry) -> dict:
    """Stable wire form of one memory entry (version-pinned field set)."""
    return {
        "source_node": entry.insight.source_node,
        "depth": entry.depth,
        "action": entry.action.value if entry.action else None,
        "summary": entry.insight.summary,
        "metric": entry.feedback.metric.value if entry.feedback.metric else None,
        "diagnostics_kind": entry.feedback.error_diagnostics.kind
        if entry.feedback.error_diagnostics
        else None,
        "log_excerpt": entry.feedback.log_excerpt,
    }


def _entry_line(entry: MemoryEntry) -> str:
    return json.dumps(serialize_entry(entry), sort_keys=True, ensure_ascii=False)


_ACTION_DIRECTIVES = {
    ActionKind.DRAFT: "Draft: produce an initial, runnable end-to-end solution.",
    ActionKind.DEBUG: (
        "Debug: identify and fix the error in the prior solution; keep its overall approach."
    ),
    ActionKind.IMPROVE: (
        "Improve: enhance the working prior solution to achieve a strictly better score."
    ),
}


def render_context(
    memory: MemoryContext,
    task: "TaskSpec",
    action: ActionKind,
    *,
    context_cap: int = 6000,
) -> tuple[str, str]:
    """Produce the (instruction, think-seed) sections for one generation request.

    The instruction carries the task and the action directive. The think seed
    serializes the memory entries — parent first, siblings by node id — under
    a fixed delimiter so backends without a native reasoning channel can
    prepend it verbatim. When the serialized memory exceeds the cap, sibling
    entries are evicted oldest-first (entries are never cut mid-record); the
    parent entry always survives.
    """
    instruction = "\n".join(
        [
            f"Task: {task.task_id}",
            task.description,
            "",
            f"Target metric: {task.metric_name} ({task.metric_direction.value}).",
            (
                "Protocol: print the final score to stdout as a line matching the task "
                f"metric pattern, and write the submission artifact to {task.submission_path}."
            ),
            "Respond with a short plan followed by exactly one fenced code block "
            "containing the complete solution.",
            _ACTION_DIRECTIVES[action],
        ]
    )
    siblings = sorted(memory.sibling_entries, key=lambda e: e.insight.source_node)
    while True:
        think_seed = _assemble_think_seed(memory.parent_entry, siblings)
        if len(think_seed) <= context_cap or not siblings:
            break
        siblings = siblings[1:]
    return instruction, think_seed


def _assemble_think_seed(
    parent: Optional[MemoryEntry], siblings: list[MemoryEntry]
) -> str:
    if parent is None and not siblings:
        return ""
    lines = [THINK_SEED_HEADER]
    if parent is not None:
        lines.append(LINEAGE_LABEL)
        lines.append(_entry_line(parent))
    if siblings:
        lines.append(PARALLEL_LABEL)
        lines.extend(_entry_line(entry) for entry in siblings)
    lines.append(THINK_SEED_FOOTER)
    return "\n".join(lines)
