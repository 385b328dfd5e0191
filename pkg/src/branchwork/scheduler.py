"""Worker scheduling: virtual-clock and threaded drivers for parallel search.

Workers are generators that yield blocking commands; a driver executes the
commands and feeds results back. Two drivers share that protocol:

* :class:`VirtualDriver` runs everything on one thread under a virtual clock,
  ordering worker wake-ups by (timestamp, worker index). With deterministic
  operation durations the full interleaving — and therefore the journal — is
  bit-reproducible, which is what the seeded test harness relies on.
* :class:`ThreadDriver` runs one OS thread per worker against real backends
  and the real clock. Correctness there comes from the tree's serialized
  mutation interface, not from ordering.

Commands:
  ("io", node_key, op, thunk)  run the thunk (a generation or execution),
                               deliver its return value after the op's
                               duration; may deliver BUDGET_CUT instead when
                               the virtual completion would overrun the wall
                               clock limit.
  ("park",)                    sleep until another worker changes claim or
                               terminal state.
"""

from __future__ import annotations

import heapq
import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable, Generator, Optional

from .tree import SearchTree

logger = logging.getLogger(__name__)

__all__ = [
    "BUDGET_CUT",
    "WorkerCrash",
    "SearchBudget",
    "WorkerSlot",
    "BranchClaim",
    "branch_claims",
    "VirtualDriver",
    "ThreadDriver",
    "pick_entry_points",
    "claim_branch",
    "release_branch",
]

WorkerGen = Generator[tuple, object, None]
DurationFn = Callable[[str, str], float]


class _BudgetCut:
    """Sentinel delivered instead of an io result when the budget ran out."""

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return "<BUDGET_CUT>"


BUDGET_CUT = _BudgetCut()


@dataclass(frozen=True)
class WorkerCrash:
    """Unexpected exception escaping a backend call; carried as a value."""

    error: str


@dataclass(frozen=True)
class SearchBudget:
    """Limits on one run: wall clock, per-execution timeout, optional step cap."""

    wall_clock_limit: float
    per_step_timeout: float
    max_steps: Optional[int] = None

    def __post_init__(self) -> None:
        if self.wall_clock_limit <= 0:
            raise ValueError("wall_clock_limit must be positive")
        if self.per_step_timeout <= 0:
            raise ValueError("per_step_timeout must be positive")


@dataclass
class WorkerSlot:
    """Live state of one search worker."""

    worker_id: str
    current_entry: Optional[int] = None
    steps_taken: int = 0
    state: str = "idle"  # idle | searching | draining


@dataclass(frozen=True)
class BranchClaim:
    node_id: int
    worker_id: str
    claimed_at: float


def branch_claims(tree: SearchTree) -> list[BranchClaim]:
    """Active claims as records, ordered by node id."""
    return sorted(
        (BranchClaim(node_id=nid, worker_id=worker, claimed_at=at)
         for nid, worker, at in tree.claims_snapshot()),
        key=lambda claim: claim.node_id,
    )


def pick_entry_points(tree: SearchTree, k: int, c: Optional[float] = None) -> list[int]:
    """Top-k root children by UCT, used as initial per-worker entry points."""
    return tree.pick_entry_points(k, c=c)


def claim_branch(
    tree: SearchTree, worker_id: str, *, c: Optional[float] = None, at: float = 0.0
) -> Optional[int]:
    """Claim the best unclaimed live root branch for a worker, if any."""
    return tree.claim_branch(worker_id, c=c, at=at)


def release_branch(tree: SearchTree, worker_id: str, node_id: int) -> None:
    """Give a claimed branch back; only the owner may release."""
    tree.release(node_id, worker_id)


def _run_thunk(thunk: Callable[[], object]) -> object:
    try:
        return thunk()
    except Exception as exc:  # deliberate catch-all: a crashing backend must
        # not take the scheduler down (the worker converts this to a release).
        logger.exception("backend call crashed")
        return WorkerCrash(error=f"{type(exc).__name__}: {exc}")


class VirtualDriver:
    """Single-threaded deterministic scheduler with a virtual clock.

    Each worker has at most one pending wake-up in the heap, keyed by
    (ready_time, worker_index), so ties resolve by worker index and the whole
    interleaving is a pure function of the yielded durations. Io thunks run
    at schedule time (they touch no shared tree state; commits happen inside
    the generators after the wake-up).
    """

    def __init__(
        self,
        *,
        wall_clock_limit: float,
        duration_fn: Optional[DurationFn] = None,
        default_duration: float = 1.0,
    ) -> None:
        self.now = 0.0
        self.wall_clock_limit = wall_clock_limit
        self._duration_fn = duration_fn
        self._default_duration = default_duration
        self._heap: list[tuple[float, int]] = []
        self._pending: dict[int, object] = {}
        self._gens: dict[int, WorkerGen] = {}
        self._parked: set[int] = set()
        self._wake_requested = False

    def clock(self) -> float:
        return self.now

    def notify(self) -> None:
        """Mark that claim/terminal state changed; parked workers get woken."""
        self._wake_requested = True

    def _duration(self, op: str, key: str) -> float:
        if self._duration_fn is None:
            return self._default_duration
        return max(self._duration_fn(op, key), 1e-9)

    def run(self, workers: dict[int, WorkerGen]) -> None:
        self._gens = dict(workers)
        for widx in sorted(self._gens):
            heapq.heappush(self._heap, (0.0, widx))
            self._pending[widx] = None
        while self._heap or self._parked:
            if not self._heap:
                # Nothing scheduled: wake the parked workers so they can
                # observe the final state and exit. If the same workers all
                # park again with nothing new scheduled, nothing can ever
                # change — that is a scheduling bug.
                parked_before = set(self._parked)
                if not self._wake_parked():
                    break
                self._drain_ready()
                if not self._heap and self._parked == parked_before:
                    raise RuntimeError("all workers parked with no pending work")
                continue
            self._drain_ready()

    def _drain_ready(self) -> None:
        while self._heap:
            ts, widx = heapq.heappop(self._heap)
            self.now = max(self.now, ts)
            payload = self._pending.pop(widx, None)
            self._step(widx, payload)
            if self._wake_requested:
                self._wake_requested = False
                self._wake_parked()

    def _wake_parked(self) -> bool:
        woke = False
        for widx in sorted(self._parked):
            heapq.heappush(self._heap, (self.now, widx))
            self._pending[widx] = None
            woke = True
        self._parked.clear()
        return woke

    def _step(self, widx: int, payload: object) -> None:
        gen = self._gens[widx]
        while True:
            try:
                command = gen.send(payload)
            except StopIteration:
                self.notify()
                return
            if command[0] == "park":
                self._parked.add(widx)
                return
            if command[0] != "io":
                raise RuntimeError(f"unknown worker command {command[0]!r}")
            _, key, op, thunk = command
            duration = self._duration(op, key)
            if self.now + duration > self.wall_clock_limit:
                payload = BUDGET_CUT
                continue
            result = _run_thunk(thunk)
            heapq.heappush(self._heap, (self.now + duration, widx))
            self._pending[widx] = result
            return


class ThreadDriver:
    """One OS thread per worker; io thunks run inline and take real time."""

    def __init__(self, *, wall_clock_limit: float, poll_interval: float = 0.05) -> None:
        self.wall_clock_limit = wall_clock_limit
        self._poll_interval = poll_interval
        self._start = time.monotonic()
        self._cond = threading.Condition()

    def clock(self) -> float:
        return time.monotonic() - self._start

    def notify(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def run(self, workers: dict[int, WorkerGen]) -> None:
        self._start = time.monotonic()
        threads = [
            threading.Thread(target=self._drive, args=(gen,), name=f"branchwork-w{widx}")
            for widx, gen in sorted(workers.items())
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()

    def _drive(self, gen: WorkerGen) -> None:
        payload: object = None
        while True:
            try:
                command = gen.send(payload)
            except StopIteration:
                self.notify()
                return
            if command[0] == "park":
                with self._cond:
                    self._cond.wait(self._poll_interval)
                payload = None
                continue
            if command[0] != "io":
                raise RuntimeError(f"unknown worker command {command[0]!r}")
            _, _key, _op, thunk = command
            if self.clock() >= self.wall_clock_limit:
                payload = BUDGET_CUT
                continue
            payload = _run_thunk(thunk)
