"""Append-only run journal: one JSON event per line, versioned header first.

The journal is the single source of truth for a run: replaying it rebuilds
the exact final tree (nodes, statistics, terminal marks, claims), and the
generation/execution payloads double as backend transcripts so a run can be
resumed without re-paying for completed work. Writes are serialized through
one writer and flushed per event; a corrupted tail is skipped with a warning
and the intact prefix still replays.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .memory import FeedbackRecord, InsightRecord
from .tree import (
    ActionKind,
    MetricValue,
    NodeStatus,
    SearchTree,
    SolutionNode,
    TerminalReason,
)

logger = logging.getLogger(__name__)

__all__ = [
    "JournalEvent",
    "JournalWriter",
    "read_journal",
    "replay_tree",
    "ReplayState",
    "build_transcript_cache",
    "JOURNAL_VERSION",
    "KIND_HEADER",
    "KIND_BOOTSTRAP",
    "KIND_CLAIM",
    "KIND_RELEASE",
    "KIND_GENERATION",
    "KIND_EXECUTION",
    "KIND_EXPANSION",
    "KIND_REWARD",
    "KIND_BACKPROP",
    "KIND_TERMINAL",
    "KIND_BUDGET_END",
]

JOURNAL_VERSION = 1

KIND_HEADER = "header"
KIND_BOOTSTRAP = "bootstrap"
KIND_CLAIM = "claim"
KIND_RELEASE = "release"
KIND_GENERATION = "generation"
KIND_EXECUTION = "execution"
KIND_EXPANSION = "expansion"
KIND_REWARD = "reward"
KIND_BACKPROP = "backprop"
KIND_TERMINAL = "terminal"
KIND_BUDGET_END = "budget_end"


@dataclass(frozen=True)
class JournalEvent:
    seq: int
    ts: float
    kind: str
    node_id: Optional[int]
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "ts": self.ts,
                "kind": self.kind,
                "node_id": self.node_id,
                "payload": self.payload,
            },
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "JournalEvent":
        data = json.loads(line)
        return cls(
            seq=int(data["seq"]),
            ts=float(data["ts"]),
            kind=str(data["kind"]),
            node_id=data.get("node_id"),
            payload=data.get("payload") or {},
        )


class JournalWriter:
    """Single-writer, append-only event sink.

    Events get strictly increasing sequence numbers and non-decreasing
    timestamps. With a path, each event is flushed to disk as one line; the
    in-memory list is always kept so a finished run can be inspected without
    re-reading the file.
    """

    def __init__(self, path: Optional[Path] = None) -> None:
        self.path = Path(path) if path else None
        self.events: list[JournalEvent] = []
        self._lock = threading.Lock()
        self._last_ts = 0.0
        self._handle = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8")

    @property
    def next_seq(self) -> int:
        with self._lock:
            return len(self.events)

    @property
    def last_seq(self) -> int:
        with self._lock:
            return len(self.events) - 1

    def append(
        self, kind: str, node_id: Optional[int], payload: dict, *, ts: float
    ) -> JournalEvent:
        with self._lock:
            stamped = max(ts, self._last_ts)
            self._last_ts = stamped
            event = JournalEvent(
                seq=len(self.events), ts=stamped, kind=kind, node_id=node_id, payload=payload
            )
            self.events.append(event)
            if self._handle is not None:
                self._handle.write(event.to_json() + "\n")
                self._handle.flush()
            return event

    def close(self) -> None:
        with self._lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None

    def to_lines(self) -> list[str]:
        with self._lock:
            return [event.to_json() for event in self.events]


def read_journal(path: str | Path) -> tuple[list[JournalEvent], list[str]]:
    """Parse a journal file; stop at the first corrupt or out-of-order line.

    Returns the intact prefix and any warnings. An empty or missing tail is
    not an error: truncated journals replay to their prefix tree.
    """
    events: list[JournalEvent] = []
    warnings: list[str] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                event = JournalEvent.from_json(line)
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                warnings.append(f"line {line_no}: unreadable event ({exc}); stopping replay here")
                break
            if event.seq != len(events):
                warnings.append(
                    f"line {line_no}: sequence gap (expected {len(events)}, got {event.seq}); "
                    "stopping replay here"
                )
                break
            events.append(event)
    for message in warnings:
        logger.warning("journal %s: %s", path, message)
    return events, warnings


@dataclass
class ReplayState:
    """Tree plus run metadata reconstructed from a journal prefix."""

    tree: SearchTree
    header: dict = field(default_factory=dict)
    reward_sum: float = 0.0
    verification_count: int = 0
    improvement_curve: list[tuple[float, float]] = field(default_factory=list)
    generation_count: int = 0
    execution_count: int = 0
    budget_end: Optional[dict] = None
    last_ts: float = 0.0

    @property
    def config(self) -> dict:
        return self.header.get("config", {})

    @property
    def task(self) -> dict:
        return self.header.get("task", {})


def _node_from_payload(payload: dict) -> SolutionNode:
    insight = payload.get("insight")
    feedback = payload.get("feedback")
    metric = payload.get("metric")
    return SolutionNode(
        id=int(payload["id"]),
        parent_id=payload["parent_id"],
        action=ActionKind(payload["action"]),
        health=NodeStatus(payload["health"]),
        plan=payload.get("plan", ""),
        code=payload.get("code", ""),
        metric=MetricValue.from_dict(metric) if metric else None,
        insight=InsightRecord.from_dict(insight) if insight else None,
        feedback=FeedbackRecord.from_dict(feedback) if feedback else None,
        improve_delta=payload.get("improve_delta"),
        debug_chain_len=int(payload.get("debug_chain_len", 0)),
        key=payload.get("key", ""),
        slot=int(payload.get("slot", 0)),
        depth=int(payload.get("depth", 0)),
    )


def replay_tree(
    events: Iterable[JournalEvent], *, upto_seq: Optional[int] = None
) -> ReplayState:
    """Rebuild the search state by applying journal events in order.

    ``upto_seq`` replays only events with seq <= upto_seq, which reconstructs
    the exact tree snapshot a given expansion selected against.
    """
    state = ReplayState(tree=SearchTree())
    tree = state.tree
    for event in events:
        if upto_seq is not None and event.seq > upto_seq:
            break
        state.last_ts = event.ts
        payload = event.payload
        if event.kind == KIND_HEADER:
            state.header = payload
            config = payload.get("config", {})
            tree.max_children = int(config.get("max_children", tree.max_children))
            tree.c_uct = float(config.get("c_uct", tree.c_uct))
            tree.set_root_capacity(int(config.get("num_workers", 1)))
        elif event.kind == KIND_GENERATION:
            state.generation_count += 1
        elif event.kind == KIND_EXECUTION:
            state.execution_count += 1
        elif event.kind == KIND_BOOTSTRAP:
            pass
        elif event.kind == KIND_CLAIM:
            if not tree.claim(int(payload["branch"]), payload["worker"], at=event.ts):
                logger.warning(
                    "replay: claim at seq %d could not be applied (journal inconsistency)",
                    event.seq,
                )
        elif event.kind == KIND_RELEASE:
            tree.release(int(payload["branch"]), payload["worker"])
        elif event.kind == KIND_EXPANSION:
            node = _node_from_payload(payload["node"])
            tree.attach(node)
            if node.action is ActionKind.IMPROVE:
                threshold = float(state.config.get("t_improve", 0.001))
                tree.record_improve_attempt(node.parent_id, node.improve_delta, threshold)
            if node.metric is not None:
                if tree.observe_metric(node):
                    state.improvement_curve.append((event.ts, node.metric.value))
        elif event.kind == KIND_REWARD:
            state.reward_sum += float(payload["total"])
            state.verification_count += 1
        elif event.kind == KIND_BACKPROP:
            tree.backpropagate([int(n) for n in payload["path"]], float(payload["reward"]))
        elif event.kind == KIND_TERMINAL:
            node = tree.node(int(payload["node"]))
            if node.terminal_reason is None:
                node.terminal_reason = TerminalReason(payload["reason"])
        elif event.kind == KIND_BUDGET_END:
            state.budget_end = payload
        else:
            logger.warning("replay: skipping unknown event kind %r", event.kind)
    return state


def build_transcript_cache(events: Iterable[JournalEvent]) -> dict[str, dict]:
    """Index generation/execution transcripts by node lineage key.

    Resume runs consult this cache before touching a backend, so completed
    work is never re-paid when a run continues under a larger budget.
    """
    cache: dict[str, dict] = {}
    for event in events:
        if event.kind == KIND_GENERATION:
            key = event.payload.get("node_key")
            if key is None:
                continue
            entry = cache.setdefault(key, {})
            if event.payload.get("ok"):
                entry["generation"] = event.payload["response"]
            else:
                entry["generation_error"] = {
                    "kind": event.payload.get("error_kind", "backend-unavailable"),
                    "message": event.payload.get("error", "generation failed"),
                }
        elif event.kind == KIND_EXECUTION:
            key = event.payload.get("node_key")
            if key is None:
                continue
            cache.setdefault(key, {})["execution"] = event.payload["result"]
    return cache
