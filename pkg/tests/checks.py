"""Journal verification helpers shared by scheduler and acceptance tests.

These re-derive properties from raw events instead of trusting engine state:
claim intervals, terminal-expansion violations, statistics conservation, and
the exact memory scope of every generation.
"""

from __future__ import annotations

from branchwork.journal import (
    JournalEvent,
    KIND_BACKPROP,
    KIND_CLAIM,
    KIND_EXPANSION,
    KIND_GENERATION,
    KIND_RELEASE,
    KIND_REWARD,
    KIND_TERMINAL,
    replay_tree,
)
from branchwork.memory import build_memory, render_context
from branchwork.tree import ActionKind


def assert_no_overlapping_claims(events: list[JournalEvent]) -> int:
    """No two claim intervals on one node may overlap; returns claim count."""
    open_claims: dict[int, str] = {}
    total = 0
    for event in events:
        if event.kind == KIND_CLAIM:
            branch = event.payload["branch"]
            assert branch not in open_claims, f"double claim on node {branch} (seq {event.seq})"
            open_claims[branch] = event.payload["worker"]
            total += 1
        elif event.kind == KIND_RELEASE:
            branch = event.payload["branch"]
            assert open_claims.get(branch) == event.payload["worker"], (
                f"release without matching claim on node {branch} (seq {event.seq})"
            )
            del open_claims[branch]
    assert open_claims == {}, f"claims left open at end of run: {open_claims}"
    return total


def assert_no_terminal_expansion(events: list[JournalEvent]) -> int:
    """No expansion may target a node already marked terminal; returns count."""
    terminal: set[int] = set()
    expansions = 0
    for event in events:
        if event.kind == KIND_TERMINAL:
            terminal.add(event.payload["node"])
        elif event.kind == KIND_EXPANSION:
            parent = event.payload["node"]["parent_id"]
            assert parent not in terminal, (
                f"expansion under terminal node {parent} (seq {event.seq})"
            )
            expansions += 1
    return expansions


def assert_statistics_conservation(events: list[JournalEvent]) -> None:
    """Root visits equal verification count; root reward equals reward sum."""
    state = replay_tree(events)
    root = state.tree.root
    assert root.visit_count == state.verification_count, (
        f"root N {root.visit_count} != verifications {state.verification_count}"
    )
    assert abs(root.total_reward - state.reward_sum) < 1e-9, (
        f"root Q {root.total_reward} != reward sum {state.reward_sum}"
    )


def assert_action_legality(events: list[JournalEvent]) -> None:
    """Draft under root, debug under buggy, improve under valid — whole journal."""
    state = replay_tree(events)
    tree = state.tree
    for node in tree.all_nodes():
        if node.is_root:
            continue
        parent = tree.node(node.parent_id)
        if node.action is ActionKind.DRAFT:
            assert parent.is_root
        elif node.action is ActionKind.DEBUG:
            assert parent.health.value == "buggy"
        else:
            assert parent.health.value == "valid"


def assert_memory_scope_exact(events: list[JournalEvent], task) -> int:
    """Every journaled generation used exactly the snapshot-time memory.

    For each generation event, replay the journal prefix up to the recorded
    snapshot sequence number, rebuild the memory for the expansion target, and
    compare both the rendered think seed and the independently computed
    entry-source set (immediate parent + verified same-depth other-branch
    nodes). Returns the number of generations checked.
    """
    checked = 0
    expansions = {
        e.node_id: e.payload["node"] for e in events if e.kind == KIND_EXPANSION
    }
    for event in events:
        if event.kind != KIND_GENERATION:
            continue
        node_record = expansions[event.node_id]
        parent_id = node_record["parent_id"]
        snapshot = replay_tree(events, upto_seq=event.payload["snapshot_seq"])
        context = build_memory(snapshot.tree, parent_id)
        caps = snapshot.config.get("memory_caps", {})
        _, think_seed = render_context(
            context,
            task,
            ActionKind(event.payload["action"]),
            context_cap=caps.get("context_chars", 6000),
        )
        assert think_seed == event.payload["think_seed"], (
            f"think seed mismatch for node {event.node_id} (seq {event.seq})"
        )
        # Independent set computation straight from the snapshot tree.
        tree = snapshot.tree
        parent = tree.node(parent_id)
        child_depth = parent.depth + 1

        def branch_of(node):
            cursor = node
            while cursor.parent_id is not None and cursor.parent_id != 0:
                cursor = tree.node(cursor.parent_id)
            return cursor.id if cursor.parent_id == 0 else None

        expected = set()
        if not parent.is_root and parent.insight is not None and parent.feedback is not None:
            expected.add(parent.id)
        own_branch = branch_of(parent) if not parent.is_root else None
        for other in tree.all_nodes():
            if other.is_root or other.depth != child_depth:
                continue
            if own_branch is not None and branch_of(other) == own_branch:
                continue
            if other.insight is None or other.feedback is None:
                continue
            expected.add(other.id)
        got = {e.insight.source_node for e in context.entries}
        assert got == expected, f"memory scope mismatch for node {event.node_id}"
        checked += 1
    return checked


def expansion_timestamps(events: list[JournalEvent]) -> list[float]:
    return [e.ts for e in events if e.kind == KIND_EXPANSION]
