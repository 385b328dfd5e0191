from __future__ import annotations

import json
from pathlib import Path

import pytest

from branchwork.memory import (
    Diagnostics,
    FeedbackRecord,
    InsightRecord,
    MemoryContext,
    MemoryEntry,
    ReasoningTrace,
    build_memory,
    collect_feedback,
    extract_insights,
    render_context,
    serialize_entry,
)
from branchwork.sandbox import ExecutionResult, ExitStatus
from branchwork.tree import ActionKind, MetricDirection, MetricValue, NodeStatus, SearchTree

from conftest import make_task

GOLDEN = Path(__file__).parent / "golden" / "think_seed.txt"


def metric(value: float) -> MetricValue:
    return MetricValue(value=value, direction=MetricDirection.MAXIMIZE)


def make_trace(think: str = "", answer: str = "answer body") -> ReasoningTrace:
    return ReasoningTrace(raw=think + answer, think_section=think, answer_section=answer)


def success_result(value: float) -> ExecutionResult:
    return ExecutionResult(
        exit_status=ExitStatus.SUCCESS,
        stdout_tail=f"epoch done\nvalidation_metric: {value}\n",
        stderr_tail="",
        metric=metric(value),
        submission_present=True,
        wall_time=2.0,
    )


def crash_result() -> ExecutionResult:
    stderr = (
        "Traceback (most recent call last):\n"
        '  File "solution.py", line 3, in <module>\n'
        "ZeroDivisionError: division by zero"
    )
    return ExecutionResult(
        exit_status=ExitStatus.NONZERO_EXIT,
        stdout_tail="starting\n",
        stderr_tail=stderr,
        metric=None,
        submission_present=False,
        wall_time=0.4,
    )


# ---------------------------------------------------------------------------
# insight extraction
# ---------------------------------------------------------------------------


class TestExtractInsights:
    def test_cap_is_enforced_and_summary_nonempty(self):
        think = "\n\n".join(f"paragraph {i} " + "x" * 400 for i in range(25))
        record = extract_insights(make_trace(think), source_node=4, cap=1500)
        assert record is not None
        assert 0 < len(record.summary) <= 1500

    def test_strategy_paragraph_is_tagged(self):
        think = "First look at the data.\n\nStrategy: use gradient boosting here.\n\nDone."
        record = extract_insights(make_trace(think), source_node=1)
        assert record is not None
        assert "strategy" in record.tags
        assert "Strategy: use gradient boosting here." in record.summary

    def test_empty_trace_yields_empty_insight_signal(self):
        assert extract_insights(ReasoningTrace(raw=""), source_node=1) is None

    def test_falls_back_to_raw_without_think_channel(self):
        record = extract_insights(make_trace("", "decided to normalize features"), source_node=2)
        assert record is not None
        assert "normalize" in record.summary

    def test_error_language_is_tagged_debug(self):
        record = extract_insights(make_trace("The error was a shape mismatch; fix the reshape."), source_node=3)
        assert record is not None
        assert "debug" in record.tags

    def test_trace_hash_recorded(self):
        a = extract_insights(make_trace("same text"), source_node=1)
        b = extract_insights(make_trace("same text"), source_node=2)
        assert a is not None and b is not None
        assert a.created_from == b.created_from


# ---------------------------------------------------------------------------
# feedback collection
# ---------------------------------------------------------------------------


class TestCollectFeedback:
    def test_successful_run_copies_metric(self):
        record = collect_feedback(success_result(0.87), source_node=1)
        assert record.metric is not None and record.metric.value == 0.87
        assert record.error_diagnostics is None

    def test_crash_classified_with_traceback_tail(self):
        record = collect_feedback(crash_result(), source_node=1)
        assert record.error_diagnostics is not None
        assert record.error_diagnostics.kind == "runtime-error"
        assert record.log_excerpt.rstrip().endswith("ZeroDivisionError: division by zero")

    def test_timeout_classification_passes_through(self):
        result = ExecutionResult(
            exit_status=ExitStatus.TIMEOUT, stdout_tail="", stderr_tail="",
            metric=None, submission_present=False, wall_time=10.0,
        )
        record = collect_feedback(result, source_node=1)
        assert record.error_diagnostics.kind == "timeout"

    def test_excerpt_keeps_tail_plus_first_error_line(self):
        lines = ["Error: bad seed"] + [f"log line {i}" for i in range(200)]
        result = ExecutionResult(
            exit_status=ExitStatus.NONZERO_EXIT, stdout_tail="\n".join(lines),
            stderr_tail="", metric=None, submission_present=False, wall_time=1.0,
        )
        record = collect_feedback(result, source_node=1, log_lines=50)
        excerpt = record.log_excerpt.splitlines()
        assert excerpt[0] == "Error: bad seed"
        assert len(excerpt) == 51

    def test_generation_failure_without_result(self):
        record = collect_feedback(None, source_node=1, generation_error="no code block")
        assert record.error_diagnostics.kind == "generation-failure"
        assert "no code block" in record.error_diagnostics.message

    def test_requires_metric_or_diagnostics(self):
        with pytest.raises(ValueError):
            FeedbackRecord(source_node=1, metric=None, log_excerpt="", error_diagnostics=None)


# ---------------------------------------------------------------------------
# memory construction
# ---------------------------------------------------------------------------


def attach_records(tree: SearchTree, node_id: int, think: str, value: float | None) -> None:
    node = tree.node(node_id)
    node.insight = extract_insights(make_trace(think), source_node=node_id)
    result = success_result(value) if value is not None else crash_result()
    node.feedback = collect_feedback(result, source_node=node_id)


def three_branch_tree() -> SearchTree:
    """Three drafts (ids 1-3) each with one depth-2 child (ids 4-6).

    Branch a: draft 1 -> improve 4; branch b: draft 2 -> improve 5;
    branch c: buggy draft 3 -> still-buggy debug 6. All six carry records.
    """
    tree = SearchTree()
    tree.set_root_capacity(3)
    a = tree.add_node(0, action=ActionKind.DRAFT, health=NodeStatus.VALID, metric=metric(0.5))
    b = tree.add_node(0, action=ActionKind.DRAFT, health=NodeStatus.VALID, metric=metric(0.4))
    c = tree.add_node(0, action=ActionKind.DRAFT, health=NodeStatus.BUGGY)
    attach_records(tree, a.id, "Strategy: start simple.", 0.5)
    attach_records(tree, b.id, "Try a linear baseline.", 0.4)
    attach_records(tree, c.id, "Something broke; error in loader.", None)
    a2 = tree.add_node(a.id, action=ActionKind.IMPROVE, health=NodeStatus.VALID, metric=metric(0.6))
    b2 = tree.add_node(b.id, action=ActionKind.IMPROVE, health=NodeStatus.VALID, metric=metric(0.45))
    c2 = tree.add_node(c.id, action=ActionKind.DEBUG, health=NodeStatus.BUGGY)
    attach_records(tree, a2.id, "Improve: switch to boosting.", 0.6)
    attach_records(tree, b2.id, "Improve: tune the learning rate.", 0.45)
    attach_records(tree, c2.id, "Still failing; error persists in loader.", None)
    return tree


class TestBuildMemory:
    def test_first_draft_gets_empty_context(self):
        tree = SearchTree()
        tree.set_root_capacity(3)
        context = build_memory(tree, 0)
        assert context.parent_entry is None
        assert context.sibling_entries == []

    def test_parent_plus_same_depth_other_branches(self):
        # Expanding under draft 1: the new node sits at depth 2, its parent
        # entry is draft 1's, and the verified depth-2 nodes of the other two
        # branches are the siblings.
        tree = three_branch_tree()
        context = build_memory(tree, 1)
        assert context.depth == 2
        assert context.parent_entry is not None
        assert context.parent_entry.insight.source_node == 1
        assert [e.insight.source_node for e in context.sibling_entries] == [5, 6]

    def test_nodes_at_other_depths_are_excluded(self):
        # Expanding under node 4 (depth 2): the child would sit at depth 3 and
        # no other branch has depth-3 nodes yet; the depth-1/2 nodes of other
        # branches must not leak in.
        tree = three_branch_tree()
        context = build_memory(tree, 4)
        assert context.depth == 3
        assert context.parent_entry.insight.source_node == 4
        assert context.sibling_entries == []

    def test_deeper_nodes_in_other_branches_become_siblings(self):
        tree = three_branch_tree()
        b3 = tree.add_node(5, action=ActionKind.IMPROVE, health=NodeStatus.VALID, metric=metric(0.5))
        attach_records(tree, b3.id, "Improve: deeper tweak.", 0.5)
        context = build_memory(tree, 4)
        assert [e.insight.source_node for e in context.sibling_entries] == [b3.id]

    def test_same_branch_cousins_are_excluded(self):
        tree = three_branch_tree()
        a2 = tree.node(4)
        a2b = tree.add_node(1, action=ActionKind.IMPROVE, health=NodeStatus.VALID, metric=metric(0.55))
        attach_records(tree, a2b.id, "Alternative improve in the same branch.", 0.55)
        # Expanding under draft 1: a2 and a2b are same-branch depth-2 nodes,
        # not parallel-branch siblings.
        context = build_memory(tree, 1)
        got = [e.insight.source_node for e in context.sibling_entries]
        assert a2.id not in got and a2b.id not in got
        assert got == [5, 6]

    def test_buggy_siblings_are_included(self):
        tree = three_branch_tree()
        context = build_memory(tree, 1)
        by_id = {e.insight.source_node: e for e in context.sibling_entries}
        assert by_id[6].feedback.error_diagnostics is not None
        assert by_id[6].feedback.error_diagnostics.kind == "runtime-error"

    def test_entries_missing_records_are_skipped_and_counted(self):
        tree = three_branch_tree()
        tree.node(5).insight = None
        context = build_memory(tree, 1)
        assert [e.insight.source_node for e in context.sibling_entries] == [6]
        assert context.skipped == 1

    def test_draft_expansion_sees_other_drafts(self):
        tree = three_branch_tree()
        context = build_memory(tree, 0)
        assert [e.insight.source_node for e in context.sibling_entries] == [1, 2, 3]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


class TestRenderContext:
    def test_empty_memory_renders_empty_think_seed(self):
        context = MemoryContext(parent_entry=None, sibling_entries=[], depth=1)
        instruction, think_seed = render_context(context, make_task(), ActionKind.DRAFT)
        assert think_seed == ""
        assert "demo-task" in instruction
        assert "Draft:" in instruction

    def test_entries_render_parent_first_then_siblings_by_id(self):
        tree = three_branch_tree()
        context = build_memory(tree, 1)
        _, think_seed = render_context(context, make_task(), ActionKind.IMPROVE)
        payloads = [json.loads(line) for line in think_seed.splitlines() if line.startswith("{")]
        assert [p["source_node"] for p in payloads] == [1, 5, 6]

    def test_serialized_entry_field_set_is_pinned(self):
        tree = three_branch_tree()
        entry = build_memory(tree, 1).parent_entry
        assert entry is not None
        assert set(serialize_entry(entry)) == {
            "source_node", "depth", "action", "summary", "metric",
            "diagnostics_kind", "log_excerpt",
        }

    def test_rendering_is_deterministic(self):
        tree = three_branch_tree()
        context = build_memory(tree, 1)
        first = render_context(context, make_task(), ActionKind.IMPROVE)
        second = render_context(context, make_task(), ActionKind.IMPROVE)
        assert first == second

    def test_over_budget_evicts_oldest_siblings_first(self):
        def entry(node_id: int, summary: str) -> MemoryEntry:
            return MemoryEntry(
                insight=InsightRecord(node_id, summary, ("analysis",), "abc"),
                feedback=FeedbackRecord(node_id, metric(0.5), "log", None),
                action=ActionKind.IMPROVE,
                depth=2,
            )

        parent = entry(1, "parent summary")
        siblings = [entry(i, f"sibling {i} " + "y" * 300) for i in (2, 3, 4)]
        context = MemoryContext(parent_entry=parent, sibling_entries=siblings, depth=2)
        _, full = render_context(context, make_task(), ActionKind.IMPROVE, context_cap=10_000)
        _, trimmed = render_context(context, make_task(), ActionKind.IMPROVE, context_cap=900)
        kept = [json.loads(l)["source_node"] for l in trimmed.splitlines() if l.startswith("{")]
        assert kept[0] == 1  # parent always survives
        assert 2 not in kept  # oldest sibling goes first
        assert kept in ([1, 4], [1, 3, 4])
        assert len(trimmed) <= 900 < len(full)

    def test_parent_survives_even_when_alone_over_budget(self):
        tree = three_branch_tree()
        context = build_memory(tree, 1)
        _, think_seed = render_context(context, make_task(), ActionKind.IMPROVE, context_cap=10)
        payloads = [json.loads(line) for line in think_seed.splitlines() if line.startswith("{")]
        assert [p["source_node"] for p in payloads] == [1]

    def test_bounded_by_cap_when_siblings_exist(self):
        tree = three_branch_tree()
        context = build_memory(tree, 1)
        cap = 700
        _, think_seed = render_context(context, make_task(), ActionKind.IMPROVE, context_cap=cap)
        assert len(think_seed) <= cap

    def test_golden_think_seed(self):
        tree = three_branch_tree()
        context = build_memory(tree, 1)
        _, think_seed = render_context(context, make_task(), ActionKind.IMPROVE)
        assert think_seed == GOLDEN.read_text(encoding="utf-8")
