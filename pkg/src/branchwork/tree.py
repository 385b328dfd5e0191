"""Search tree over candidate solutions.

Each node is one solution state (plan + code + execution outcome). Nodes are
produced by three actions: a Draft creates an initial solution under the root,
a Debug tries to fix a buggy node, an Improve tries to raise the score of a
working node. Selection walks the tree by UCT; verification outcomes turn into
compositional rewards that are backpropagated to the root; stagnant or
over-debugged lineages are pruned by marking nodes terminal.

All mutations go through :class:`SearchTree`, which serializes them behind a
single re-entrant lock so multiple workers observe sequentially consistent
state.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Iterable, Optional, Sequence

if TYPE_CHECKING:
    from .memory import FeedbackRecord, InsightRecord
    from .sandbox import ExecutionResult

__all__ = [
    "ActionKind",
    "NodeStatus",
    "TerminalReason",
    "MetricDirection",
    "MetricValue",
    "RewardBreakdown",
    "SolutionNode",
    "SearchTree",
    "TreeError",
    "ClaimError",
    "ContradictionError",
    "uct_score",
    "relative_improvement",
    "count_failed_improvements",
    "check_improve_termination",
    "check_debug_termination",
    "compute_reward",
    "node_key",
]

DEFECT_REWARD = -1.0
DELTA_DENOM_FLOOR = 1e-12

ROOT_ID = 0


class TreeError(Exception):
    """Invalid tree operation."""


class ClaimError(TreeError):
    """Claim taken, missing, or not owned by the caller."""


class ContradictionError(TreeError):
    """A node that should already be terminal was handed to the action rule."""


class ActionKind(str, Enum):
    DRAFT = "draft"
    DEBUG = "debug"
    IMPROVE = "improve"

    @property
    def key_letter(self) -> str:
        return {"draft": "d", "debug": "b", "improve": "i"}[self.value]


class NodeStatus(str, Enum):
    BUGGY = "buggy"
    VALID = "valid"
    TERMINAL = "terminal"


class TerminalReason(str, Enum):
    IMPROVE_STAGNATION = "improve-stagnation"
    DEBUG_DEPTH = "debug-depth"
    BUDGET_EXHAUSTED = "budget-exhausted"
    # Not one of the externally triggered stop conditions: set when a node's
    # whole subtree is dead (all children terminal and no expansion capacity
    # left), so selection and claiming can skip the branch forever.
    SUBTREE_EXHAUSTED = "subtree-exhausted"


class MetricDirection(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


@dataclass(frozen=True)
class MetricValue:
    """A task score plus the direction in which it improves."""

    value: float
    direction: MetricDirection

    @property
    def normalized(self) -> float:
        """Score mapped so that greater is always better."""
        if self.direction is MetricDirection.MAXIMIZE:
            return self.value
        return -self.value

    def better_than(self, other: "MetricValue | None") -> bool:
        """Strictly better, direction-normalized. Anything beats no metric."""
        if other is None:
            return True
        if other.direction is not self.direction:
            raise TreeError("cannot compare metrics with different directions")
        return self.normalized > other.normalized

    def to_dict(self) -> dict:
        return {"value": self.value, "direction": self.direction.value}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricValue":
        return cls(value=float(data["value"]), direction=MetricDirection(data["direction"]))


@dataclass(frozen=True)
class RewardBreakdown:
    """Verification reward: defect flag plus the three unit components."""

    defective: bool
    r_q: int
    r_d: int
    r_s: int
    total: float

    def __post_init__(self) -> None:
        if self.defective:
            if (self.r_q, self.r_d, self.r_s) != (0, 0, 0) or self.total != DEFECT_REWARD:
                raise TreeError("defective reward must be -1 with zero components")
        else:
            for part in (self.r_q, self.r_d, self.r_s):
                if part not in (0, 1):
                    raise TreeError("reward components must be 0 or 1")
            if self.total != self.r_q + self.r_d + self.r_s:
                raise TreeError("reward total must equal the component sum")

    @classmethod
    def defect(cls) -> "RewardBreakdown":
        return cls(defective=True, r_q=0, r_d=0, r_s=0, total=DEFECT_REWARD)

    @classmethod
    def from_components(cls, r_q: int, r_d: int, r_s: int) -> "RewardBreakdown":
        return cls(defective=False, r_q=r_q, r_d=r_d, r_s=r_s, total=float(r_q + r_d + r_s))

    def to_dict(self) -> dict:
        return {
            "defective": self.defective,
            "r_q": self.r_q,
            "r_d": self.r_d,
            "r_s": self.r_s,
            "total": self.total,
        }


@dataclass
class SolutionNode:
    """One solution state in the tree.

    ``health`` is the verification verdict (buggy/valid) and never changes;
    ``terminal_reason`` is set once when the node gets pruned. ``status``
    presents the two as the single buggy/valid/terminal view used by
    selection.
    """

    id: int
    parent_id: Optional[int]
    action: Optional[ActionKind]
    health: NodeStatus
    plan: str = ""
    code: str = ""
    metric: Optional[MetricValue] = None
    children: list[int] = field(default_factory=list)
    visit_count: int = 0
    total_reward: float = 0.0
    debug_chain_len: int = 0
    improve_attempt_deltas: list[Optional[float]] = field(default_factory=list)
    failed_improve_count: int = 0
    improve_delta: Optional[float] = None
    insight: Optional["InsightRecord"] = None
    feedback: Optional["FeedbackRecord"] = None
    terminal_reason: Optional[TerminalReason] = None
    claimed_by: Optional[str] = None
    key: str = ""
    slot: int = 0
    depth: int = 0

    @property
    def status(self) -> NodeStatus:
        if self.terminal_reason is not None:
            return NodeStatus.TERMINAL
        return self.health

    @property
    def is_root(self) -> bool:
        return self.parent_id is None

    @property
    def is_terminal(self) -> bool:
        return self.terminal_reason is not None

    @property
    def mean_reward(self) -> float:
        if self.visit_count == 0:
            return 0.0
        return self.total_reward / self.visit_count

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent_id": self.parent_id,
            "action": self.action.value if self.action else None,
            "health": self.health.value,
            "plan": self.plan,
            "code": self.code,
            "metric": self.metric.to_dict() if self.metric else None,
            "debug_chain_len": self.debug_chain_len,
            "improve_delta": self.improve_delta,
            "insight": self.insight.to_dict() if self.insight else None,
            "feedback": self.feedback.to_dict() if self.feedback else None,
            "key": self.key,
            "slot": self.slot,
            "depth": self.depth,
        }


def node_key(parent_key: str, action: ActionKind, slot: int) -> str:
    """Stable lineage key, e.g. ``d0/i1/b0`` for draft 0 -> improve 1 -> debug 0."""
    segment = f"{action.key_letter}{slot}"
    return segment if not parent_key else f"{parent_key}/{segment}"


def uct_score(q: float, n: int, n_parent: int, c: float) -> float:
    """Upper confidence bound for a child with totals (q, n) under a parent.

    Unvisited children (n = 0) get ``math.inf`` so each expansion is visited
    once before any re-descent.
    """
    if n_parent <= 0:
        raise ValueError("uct_score requires a visited parent (n_parent >= 1)")
    if n > n_parent:
        raise ValueError("child visits cannot exceed parent visits")
    if c <= 0:
        raise ValueError("exploration constant must be positive")
    if n == 0:
        return math.inf
    return q / n + c * math.sqrt(math.log(n_parent) / n)


def relative_improvement(
    candidate: MetricValue,
    best_ancestor: MetricValue,
    *,
    denom_floor: float = DELTA_DENOM_FLOOR,
) -> float:
    """Direction-normalized relative improvement of a candidate over a baseline.

    Positive means better. The denominator is floored to guard near-zero
    baselines.
    """
    numerator = candidate.normalized - best_ancestor.normalized
    denominator = max(abs(best_ancestor.value), denom_floor)
    return numerator / denominator


def count_failed_improvements(deltas: Iterable[Optional[float]], threshold: float) -> int:
    """Number of improve attempts whose delta fell short of the threshold.

    A missing delta (the attempt produced no metric at all) counts as failed.
    """
    return sum(1 for d in deltas if d is None or d < threshold)


def check_improve_termination(node: SolutionNode, threshold: float, tau_improve: int) -> bool:
    """True when the node's failed improve attempts exceed the tolerance."""
    return count_failed_improvements(node.improve_attempt_deltas, threshold) > tau_improve


def check_debug_termination(node: SolutionNode, tau_debug: int) -> bool:
    """True when the consecutive-debug chain ending at this node is too deep."""
    return node.debug_chain_len > tau_debug


TiPolicy = Callable[[SolutionNode, Optional[float]], bool]


def default_ti_policy(improve_target: float) -> TiPolicy:
    """Improvement-completion test: an improve step that met the target delta."""

    def policy(node: SolutionNode, delta: Optional[float]) -> bool:
        return node.action is ActionKind.IMPROVE and delta is not None and delta >= improve_target

    return policy


def compute_reward(
    node: SolutionNode,
    parent: Optional[SolutionNode],
    outcome: Optional["ExecutionResult"],
    best_metric_so_far: Optional[MetricValue],
    *,
    improve_target: float,
    ti_policy: Optional[TiPolicy] = None,
) -> RewardBreakdown:
    """Score a freshly verified node.

    A defective outcome (no execution at all, non-success exit, missing
    submission artifact, or unparseable metric) yields the flat -1 reward.
    Otherwise the three unit components apply: beating the best metric seen so
    far (vacuously true for the first metric), fixing a fault the parent had,
    and completing an improvement per the pluggable stopping criterion.
    """
    defective = (
        outcome is None
        or not outcome.is_success
        or not outcome.submission_present
        or outcome.metric is None
    )
    if defective:
        return RewardBreakdown.defect()
    if node.metric is None:
        raise TreeError("valid outcome committed without a metric")
    r_q = 1 if node.metric.better_than(best_metric_so_far) else 0
    r_d = 1 if parent is not None and parent.health is NodeStatus.BUGGY else 0
    policy = ti_policy if ti_policy is not None else default_ti_policy(improve_target)
    r_s = 1 if policy(node, node.improve_delta) else 0
    return RewardBreakdown.from_components(r_q, r_d, r_s)


class SearchTree:
    """Mutable solution tree with claim bookkeeping and UCT selection.

    Every mutation and read helper takes the internal lock, so callers on
    multiple threads see a sequentially consistent tree. The tree does no
    background work of its own.
    """

    def __init__(self, *, max_children: int = 3, c_uct: float = 1.414) -> None:
        if max_children < 1:
            raise TreeError("max_children must be at least 1")
        if c_uct <= 0:
            raise TreeError("c_uct must be positive")
        self.max_children = max_children
        self.c_uct = c_uct
        self._lock = threading.RLock()
        self._nodes: dict[int, SolutionNode] = {}
        self._next_id = ROOT_ID
        self._root_capacity = max_children
        self._claims: dict[int, tuple[str, float]] = {}
        self._child_slot_counters: dict[int, int] = {}
        self.best_metric: Optional[MetricValue] = None
        self.best_node_id: Optional[int] = None
        root = SolutionNode(
            id=self._take_id(),
            parent_id=None,
            action=None,
            health=NodeStatus.VALID,
            key="",
            depth=0,
        )
        self._nodes[root.id] = root

    # -- basic access -------------------------------------------------------

    def _take_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    @property
    def root(self) -> SolutionNode:
        return self._nodes[ROOT_ID]

    def node(self, node_id: int) -> SolutionNode:
        with self._lock:
            try:
                return self._nodes[node_id]
            except KeyError:
                raise TreeError(f"unknown node id {node_id}") from None

    def __len__(self) -> int:
        return len(self._nodes)

    def all_nodes(self) -> list[SolutionNode]:
        with self._lock:
            return list(self._nodes.values())

    def set_root_capacity(self, capacity: int) -> None:
        """Root fan-out equals the bootstrap draft count, set once per run."""
        if capacity < 1:
            raise TreeError("root capacity must be at least 1")
        with self._lock:
            self._root_capacity = capacity

    def capacity(self, node: SolutionNode) -> int:
        return self._root_capacity if node.is_root else self.max_children

    def fully_expanded(self, node: SolutionNode) -> bool:
        return len(node.children) >= self.capacity(node)

    def reserve_child_slot(self, parent_id: int) -> int:
        """Hand out the next child slot index under a parent.

        Slots are reserved at step start so lineage keys are stable even when
        concurrent expansions commit out of order. Abandoned reservations leave
        gaps, which is fine: keys only need to be unique and deterministic.
        """
        with self._lock:
            parent = self.node(parent_id)
            current = self._child_slot_counters.get(parent_id, len(parent.children))
            self._child_slot_counters[parent_id] = current + 1
            return current

    # -- structure mutation -------------------------------------------------

    def add_node(
        self,
        parent_id: int,
        *,
        action: ActionKind,
        health: NodeStatus,
        plan: str = "",
        code: str = "",
        metric: Optional[MetricValue] = None,
        insight: Optional["InsightRecord"] = None,
        feedback: Optional["FeedbackRecord"] = None,
        improve_delta: Optional[float] = None,
        slot: Optional[int] = None,
    ) -> SolutionNode:
        """Append a verified child. Enforces action legality and field invariants."""
        if health not in (NodeStatus.BUGGY, NodeStatus.VALID):
            raise TreeError("new nodes must be buggy or valid")
        if health is NodeStatus.VALID and metric is None:
            raise TreeError("valid nodes must carry a metric")
        if health is NodeStatus.BUGGY and metric is not None:
            raise TreeError("buggy nodes must not carry a metric")
        with self._lock:
            parent = self.node(parent_id)
            self._check_action_legality(action, parent)
            node_slot = slot if slot is not None else self.reserve_child_slot(parent_id)
            node = SolutionNode(
                id=self._take_id(),
                parent_id=parent_id,
                action=action,
                health=health,
                plan=plan,
                code=code,
                metric=metric,
                insight=insight,
                feedback=feedback,
                improve_delta=improve_delta,
                debug_chain_len=(parent.debug_chain_len + 1 if action is ActionKind.DEBUG else 0),
                key=node_key(parent.key, action, node_slot),
                slot=node_slot,
                depth=parent.depth + 1,
            )
            self._nodes[node.id] = node
            parent.children.append(node.id)
            return node

    def attach(self, node: SolutionNode) -> None:
        """Insert a reconstructed node verbatim (journal replay path)."""
        with self._lock:
            if node.id in self._nodes:
                raise TreeError(f"node id {node.id} already present")
            if node.parent_id is None:
                raise TreeError("only the constructor may create the root")
            parent = self.node(node.parent_id)
            if node.action is None:
                raise TreeError("non-root nodes must carry an action")
            self._check_action_legality(node.action, parent)
            self._nodes[node.id] = node
            parent.children.append(node.id)
            self._next_id = max(self._next_id, node.id + 1)

    @staticmethod
    def _check_action_legality(action: ActionKind, parent: SolutionNode) -> None:
        if action is ActionKind.DRAFT:
            if not parent.is_root:
                raise TreeError("draft nodes must hang off the root")
        elif parent.is_root:
            raise TreeError(f"{action.value} nodes need a non-root parent")
        elif action is ActionKind.DEBUG and parent.health is not NodeStatus.BUGGY:
            raise TreeError("debug requires a buggy parent")
        elif action is ActionKind.IMPROVE and parent.health is not NodeStatus.VALID:
            raise TreeError("improve requires a valid parent")

    # -- selection ----------------------------------------------------------

    def select_leaf(
        self,
        start_id: int,
        *,
        c: Optional[float] = None,
        for_worker: Optional[str] = None,
    ) -> Optional[list[int]]:
        """Descend from ``start_id`` by maximal UCT to the next expansion target.

        Walks through fully expanded nodes, choosing among non-terminal
        children (and, at the root, children not claimed by another worker),
        until it reaches a node with spare child capacity. Ties break toward
        the earliest-created child. Returns the node-id path including both
        endpoints, or None when every route is terminal or claimed elsewhere.
        """
        exploration = c if c is not None else self.c_uct
        with self._lock:
            node = self.node(start_id)
            if node.is_terminal:
                return None
            path = [node.id]
            while self.fully_expanded(node):
                candidates = []
                for child_id in node.children:
                    child = self._nodes[child_id]
                    if child.is_terminal:
                        continue
                    if node.is_root and child.claimed_by not in (None, for_worker):
                        continue
                    candidates.append(child)
                if not candidates:
                    return None
                parent_visits = max(node.visit_count, 1)
                node = max(
                    candidates,
                    key=lambda ch: (
                        uct_score(ch.total_reward, ch.visit_count, parent_visits, exploration),
                        -ch.id,
                    ),
                )
                path.append(node.id)
            return path

    def decide_action(
        self,
        node_id: int,
        *,
        t_improve: float,
        tau_improve: int,
        tau_debug: int,
    ) -> ActionKind:
        """Action to apply at a selected node: the root drafts, buggy nodes
        debug, valid nodes improve. Raises if the node's stopping conditions
        already hold (it should have been pruned, not selected)."""
        with self._lock:
            node = self.node(node_id)
            if node.is_terminal:
                raise ContradictionError(f"node {node_id} is terminal")
            if node.is_root:
                return ActionKind.DRAFT
            if node.health is NodeStatus.BUGGY:
                if check_debug_termination(node, tau_debug):
                    raise ContradictionError(f"node {node_id} exceeded the debug depth")
                return ActionKind.DEBUG
            if check_improve_termination(node, t_improve, tau_improve):
                raise ContradictionError(f"node {node_id} exceeded the improve tolerance")
            return ActionKind.IMPROVE

    # -- statistics ---------------------------------------------------------

    def backpropagate(self, path: Sequence[int], reward: float) -> None:
        """Add one visit and the reward to every node on an expanded-to-root path."""
        if not path:
            raise TreeError("backpropagation path is empty")
        with self._lock:
            if path[-1] != ROOT_ID:
                raise TreeError("backpropagation path must end at the root")
            for node_id, parent_id in zip(path, path[1:]):
                if self.node(node_id).parent_id != parent_id:
                    raise TreeError("backpropagation path does not follow parent links")
            for node_id in path:
                node = self.node(node_id)
                node.visit_count += 1
                node.total_reward += reward

    def record_improve_attempt(self, parent_id: int, delta: Optional[float], threshold: float) -> None:
        """Log one improve attempt at the parent that hosted it."""
        with self._lock:
            parent = self.node(parent_id)
            parent.improve_attempt_deltas.append(delta)
            if delta is None or delta < threshold:
                parent.failed_improve_count += 1

    def best_ancestor_metric(self, node_id: int) -> Optional[MetricValue]:
        """Best direction-normalized metric among the node and its ancestors."""
        with self._lock:
            best: Optional[MetricValue] = None
            current: Optional[SolutionNode] = self.node(node_id)
            while current is not None:
                if current.metric is not None and current.metric.better_than(best):
                    best = current.metric
                current = self._nodes[current.parent_id] if current.parent_id is not None else None
            return best

    def observe_metric(self, node: SolutionNode) -> bool:
        """Track the global best metric; True when this node improved on it."""
        with self._lock:
            if node.metric is None:
                return False
            if self.best_metric is None or node.metric.better_than(self.best_metric):
                self.best_metric = node.metric
                self.best_node_id = node.id
                return True
            return False

    # -- pruning ------------------------------------------------------------

    def mark_terminal(
        self, node_id: int, reason: TerminalReason
    ) -> list[tuple[int, TerminalReason]]:
        """Prune a node and seal any ancestors left without live work.

        Idempotent: re-marking keeps the first reason and reports nothing.
        Returns the (node, reason) pairs newly marked, deepest first, so the
        caller can journal them.
        """
        with self._lock:
            node = self.node(node_id)
            if node.is_terminal:
                return []
            node.terminal_reason = reason
            marked = [(node.id, reason)]
            marked.extend(self._seal_upward(node))
            return marked

    def _seal_upward(self, node: SolutionNode) -> list[tuple[int, TerminalReason]]:
        sealed: list[tuple[int, TerminalReason]] = []
        current = node
        while current.parent_id is not None:
            parent = self._nodes[current.parent_id]
            if parent.is_terminal:
                break
            if not self._is_dead_end(parent):
                break
            parent.terminal_reason = TerminalReason.SUBTREE_EXHAUSTED
            sealed.append((parent.id, TerminalReason.SUBTREE_EXHAUSTED))
            current = parent
        # Root seals too, which ends the run: nothing selectable remains.
        if current.parent_id is None and not current.is_terminal and self._is_dead_end(current):
            current.terminal_reason = TerminalReason.SUBTREE_EXHAUSTED
            sealed.append((current.id, TerminalReason.SUBTREE_EXHAUSTED))
        return sealed

    def _is_dead_end(self, node: SolutionNode) -> bool:
        children = [self._nodes[cid] for cid in node.children]
        if children and all(ch.is_terminal for ch in children):
            if self.fully_expanded(node):
                return True
            # Further debug children of a buggy node are doomed once one hit
            # the depth limit: they would all share the same chain length.
            if node.health is NodeStatus.BUGGY and any(
                ch.terminal_reason is TerminalReason.DEBUG_DEPTH for ch in children
            ):
                return True
        return False

    # -- claims -------------------------------------------------------------

    def claim(self, node_id: int, worker_id: str, at: float = 0.0) -> bool:
        """Claim a root child for exclusive exploration. False if contended."""
        with self._lock:
            node = self.node(node_id)
            if node.parent_id != ROOT_ID:
                raise ClaimError("claims are taken at root-child granularity only")
            if node.is_terminal or node.claimed_by is not None:
                return False
            node.claimed_by = worker_id
            self._claims[node_id] = (worker_id, at)
            return True

    def release(self, node_id: int, worker_id: str) -> None:
        """Release a claim; rejects releases by anyone but the owner."""
        with self._lock:
            owner = self._claims.get(node_id)
            if owner is None:
                raise ClaimError(f"node {node_id} is not claimed")
            if owner[0] != worker_id:
                raise ClaimError(f"claim on node {node_id} belongs to {owner[0]}")
            del self._claims[node_id]
            self.node(node_id).claimed_by = None

    def claim_branch(self, worker_id: str, *, c: Optional[float] = None, at: float = 0.0) -> Optional[int]:
        """Claim the best unclaimed, non-terminal root child by UCT, or None."""
        exploration = c if c is not None else self.c_uct
        with self._lock:
            root = self.root
            candidates = [
                self._nodes[cid]
                for cid in root.children
                if not self._nodes[cid].is_terminal and self._nodes[cid].claimed_by is None
            ]
            if not candidates:
                return None
            best = max(
                candidates,
                key=lambda ch: (
                    uct_score(ch.total_reward, ch.visit_count, max(root.visit_count, 1), exploration),
                    -ch.id,
                ),
            )
            if not self.claim(best.id, worker_id, at):
                raise ClaimError("claim contention under the tree lock")
            return best.id

    def pick_entry_points(self, k: int, *, c: Optional[float] = None) -> list[int]:
        """Top-k non-terminal root children by UCT, best first."""
        if k < 1:
            raise TreeError("k must be positive")
        exploration = c if c is not None else self.c_uct
        with self._lock:
            root = self.root
            if not self.fully_expanded(root):
                raise TreeError("entry points are picked after the root is fully expanded")
            live = [self._nodes[cid] for cid in root.children if not self._nodes[cid].is_terminal]
            ranked = sorted(
                live,
                key=lambda ch: (
                    -uct_score(ch.total_reward, ch.visit_count, max(root.visit_count, 1), exploration),
                    ch.id,
                ),
            )
            return [ch.id for ch in ranked[:k]]

    def active_claims(self) -> dict[int, str]:
        with self._lock:
            return {nid: owner for nid, (owner, _) in self._claims.items()}

    def claims_snapshot(self) -> list[tuple[int, str, float]]:
        """Active claims as (node_id, worker_id, claimed_at) triples."""
        with self._lock:
            return [(nid, owner, at) for nid, (owner, at) in self._claims.items()]

    def claimable_branches(self) -> list[int]:
        with self._lock:
            return [
                cid
                for cid in self.root.children
                if not self._nodes[cid].is_terminal and self._nodes[cid].claimed_by is None
            ]

    def all_branches_terminal(self) -> bool:
        with self._lock:
            root = self.root
            if root.is_terminal:
                return True
            return bool(root.children) and all(
                self._nodes[cid].is_terminal for cid in root.children
            )

    # -- snapshots -----------------------------------------------------------

    def structure_snapshot(self) -> dict:
        """Full structural dict for equality checks between trees."""
        with self._lock:
            return {
                node.id: {
                    **node.to_dict(),
                    "children": list(node.children),
                    "visit_count": node.visit_count,
                    "total_reward": node.total_reward,
                    "failed_improve_count": node.failed_improve_count,
                    "improve_attempt_deltas": list(node.improve_attempt_deltas),
                    "terminal_reason": node.terminal_reason.value if node.terminal_reason else None,
                    "claimed_by": node.claimed_by,
                }
                for node in self._nodes.values()
            }

    def counts_by_status(self) -> dict[str, int]:
        with self._lock:
            counts: dict[str, int] = {}
            for node in self._nodes.values():
                if node.is_root:
                    continue
                counts[node.status.value] = counts.get(node.status.value, 0) + 1
            return counts

    def counts_by_action(self) -> dict[str, int]:
        with self._lock:
            counts: dict[str, int] = {}
            for node in self._nodes.values():
                if node.action is None:
                    continue
                counts[node.action.value] = counts.get(node.action.value, 0) + 1
            return counts
