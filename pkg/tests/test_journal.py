from __future__ import annotations

import json
from pathlib import Path

import pytest

from branchwork.engine import run_search
from branchwork.journal import (
    JournalEvent,
    JournalWriter,
    KIND_EXPANSION,
    build_transcript_cache,
    read_journal,
    replay_tree,
)

from conftest import make_config, make_task


def small_run(tmp_path: Path, seed: int = 2, **config_overrides):
    task = make_task()
    config = make_config(seed=seed, **config_overrides)
    journal_path = tmp_path / "journal.jsonl"
    report, engine = run_search(task, config, journal_path=journal_path)
    return task, config, journal_path, report, engine


class TestJournalWriter:
    def test_sequence_numbers_are_strictly_increasing(self, tmp_path):
        writer = JournalWriter(tmp_path / "j.jsonl")
        for i in range(5):
            event = writer.append("claim", i, {"branch": i, "worker": "w0"}, ts=float(i))
            assert event.seq == i
        writer.close()
        events, warnings = read_journal(tmp_path / "j.jsonl")
        assert [e.seq for e in events] == list(range(5))
        assert warnings == []

    def test_timestamps_never_decrease(self, tmp_path):
        writer = JournalWriter(tmp_path / "j.jsonl")
        writer.append("claim", 1, {}, ts=5.0)
        event = writer.append("claim", 2, {}, ts=3.0)
        assert event.ts == 5.0

    def test_round_trip_is_byte_stable(self):
        event = JournalEvent(seq=0, ts=1.25, kind="reward", node_id=3, payload={"total": -1.0})
        assert JournalEvent.from_json(event.to_json()).to_json() == event.to_json()


class TestReadJournal:
    def test_corrupted_tail_is_skipped_with_warning(self, tmp_path):
        _, _, path, _, engine = small_run(tmp_path, max_steps=8)
        original = path.read_text(encoding="utf-8")
        path.write_text(original + '{"seq": 999, "broken\n', encoding="utf-8")
        events, warnings = read_journal(path)
        assert len(events) == len(engine.journal.events)
        assert warnings and "unreadable" in warnings[0]

    def test_sequence_gap_stops_replay(self, tmp_path):
        path = tmp_path / "j.jsonl"
        writer = JournalWriter(path)
        writer.append("claim", 1, {}, ts=0.0)
        writer.close()
        lines = path.read_text().splitlines()
        skewed = json.loads(lines[0])
        skewed["seq"] = 7
        path.write_text(lines[0] + "\n" + json.dumps(skewed) + "\n", encoding="utf-8")
        events, warnings = read_journal(path)
        assert len(events) == 1
        assert warnings and "sequence gap" in warnings[0]

    def test_empty_journal_replays_to_bare_root(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        events, warnings = read_journal(path)
        state = replay_tree(events)
        assert len(state.tree) == 1
        assert state.tree.root.children == []
        assert warnings == []


class TestReplay:
    def test_full_replay_reconstructs_the_exact_tree(self, tmp_path):
        _, _, path, _, engine = small_run(tmp_path, max_steps=25)
        events, _ = read_journal(path)
        state = replay_tree(events)
        assert state.tree.structure_snapshot() == engine.tree.structure_snapshot()

    def test_replay_statistics_match_reward_stream(self, tmp_path):
        _, _, path, _, engine = small_run(tmp_path, max_steps=25)
        events, _ = read_journal(path)
        state = replay_tree(events)
        assert state.tree.root.visit_count == state.verification_count
        assert state.tree.root.total_reward == pytest.approx(state.reward_sum)

    def test_truncated_journal_reconstructs_a_prefix_tree(self, tmp_path):
        _, _, path, _, engine = small_run(tmp_path, max_steps=20)
        events, _ = read_journal(path)
        cut = len(events) // 2
        prefix_state = replay_tree(events[:cut])
        # Every node in the prefix tree exists identically in the full tree.
        full = engine.tree.structure_snapshot()
        prefix = prefix_state.tree.structure_snapshot()
        for node_id, record in prefix.items():
            assert node_id in full
            assert record["key"] == full[node_id]["key"]
            assert record["action"] == full[node_id]["action"]

    def test_upto_seq_replays_an_exact_snapshot(self, tmp_path):
        _, _, path, _, _ = small_run(tmp_path, max_steps=15)
        events, _ = read_journal(path)
        state_a = replay_tree(events, upto_seq=10)
        state_b = replay_tree([e for e in events if e.seq <= 10])
        assert state_a.tree.structure_snapshot() == state_b.tree.structure_snapshot()

    def test_all_claims_released_at_end(self, tmp_path):
        _, _, path, _, _ = small_run(tmp_path, max_steps=25)
        events, _ = read_journal(path)
        state = replay_tree(events)
        assert state.tree.active_claims() == {}

    def test_header_carries_config_and_task(self, tmp_path):
        _, config, path, _, _ = small_run(tmp_path, max_steps=5)
        events, _ = read_journal(path)
        header = events[0]
        assert header.kind == "header"
        assert header.payload["config"]["t_improve"] == config.t_improve
        assert header.payload["task"]["task_id"] == "demo-task"

    def test_every_node_has_one_generation_and_at_most_one_execution(self, tmp_path):
        _, _, path, _, engine = small_run(tmp_path, max_steps=25)
        events, _ = read_journal(path)
        generations: dict[int, int] = {}
        executions: dict[int, int] = {}
        for event in events:
            if event.kind == "generation":
                generations[event.node_id] = generations.get(event.node_id, 0) + 1
            elif event.kind == "execution":
                executions[event.node_id] = executions.get(event.node_id, 0) + 1
        node_ids = {n.id for n in engine.tree.all_nodes() if not n.is_root}
        assert set(generations) == node_ids
        assert all(count == 1 for count in generations.values())
        assert all(count == 1 for count in executions.values())
        assert set(executions) <= node_ids


class TestTranscriptCache:
    def test_cache_indexes_generations_and_executions_by_key(self, tmp_path):
        _, _, path, _, engine = small_run(tmp_path, max_steps=10)
        events, _ = read_journal(path)
        cache = build_transcript_cache(events)
        keys = {n.key for n in engine.tree.all_nodes() if not n.is_root}
        assert set(cache) == keys
        for entry in cache.values():
            assert "generation" in entry or "generation_error" in entry
