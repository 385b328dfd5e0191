"""Run orchestration: bootstrap, worker loops, verification, and the journal.

The search discipline implemented here:

* Bootstrap: every worker drafts one root child concurrently. When the last
  draft commits, the top-k root children by UCT become entry points and are
  claimed, one per worker, best first.
* Search: each worker repeats select -> generate -> execute -> commit inside
  its claimed branch. Selection descends by UCT through fully expanded nodes
  and stops at the first node with spare capacity. A debug expansion whose
  child is still buggy continues depth-first on that child for up to
  ``debug_chain_cap`` consecutive debugs per visit before re-selecting.
* Verification: the execution outcome fixes the node's health, its reward,
  and the improve-attempt bookkeeping on the parent; the reward then
  backpropagates along the node-to-root path.
* Pruning: a node whose consecutive-debug chain exceeds ``tau_debug`` and a
  parent whose failed improve attempts exceed ``tau_improve`` are marked
  terminal immediately after the triggering commit; ancestors left without
  live work seal upward. A worker whose branch sealed releases the claim and
  takes the best unclaimed branch, or parks when none exists.
* Budget: a step only commits when it finishes inside the wall-clock limit;
  nothing is journaled for abandoned steps, so a shorter run's journal is a
  prefix of a longer run's and resume-by-transcript-replay is exact.

All commit effects (tree mutation + journal events) happen atomically under
the tree lock at one virtual/real timestamp.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Generator, Optional

from . import memory as memory_mod
from .backends import (
    GenerationError,
    GenerationRequest,
    GenerationResponse,
    HttpChatBackend,
    ScriptedGenerator,
)
from .config import RunConfig, TaskSpec
from .journal import (
    JournalWriter,
    KIND_BACKPROP,
    KIND_BOOTSTRAP,
    KIND_BUDGET_END,
    KIND_CLAIM,
    KIND_EXECUTION,
    KIND_EXPANSION,
    KIND_GENERATION,
    KIND_HEADER,
    KIND_REWARD,
    KIND_TERMINAL,
    KIND_RELEASE,
    JOURNAL_VERSION,
    build_transcript_cache,
    read_journal,
)
from .landscape import SimulatedEvaluator, simulate_durations
from .report import RunReport, derive_report
from .sandbox import ExecutionResult, Workspace, execute
from .scheduler import BUDGET_CUT, ThreadDriver, VirtualDriver, WorkerCrash, WorkerSlot
from .tree import (
    ROOT_ID,
    ActionKind,
    NodeStatus,
    SearchTree,
    SolutionNode,
    TerminalReason,
    check_debug_termination,
    check_improve_termination,
    compute_reward,
    node_key,
    relative_improvement,
)

logger = logging.getLogger(__name__)

__all__ = ["Engine", "run_search", "resume_search", "SandboxEvaluator"]

# Step outcomes distinguished by the worker loop.
_CUT = "cut"
_CRASH = "crash"


class SandboxEvaluator:
    """Evaluator that really executes candidate code in per-node workspaces."""

    def __init__(self, task: TaskSpec, run_dir, *, timeout: float) -> None:
        self.task = task
        self.run_dir = Path(run_dir)
        self.timeout = timeout

    def evaluate(self, key: str, action: ActionKind, code: str) -> ExecutionResult:
        safe = key.replace("/", "_") or "root"
        workspace = Workspace.create(self.run_dir / "nodes" / safe, self.task.data_dir)
        return execute(
            code,
            workspace,
            self.timeout,
            interpreter_command=self.task.interpreter_command,
            metric_pattern=self.task.metric_pattern,
            metric_direction=self.task.metric_direction,
            submission_path=self.task.submission_path,
        )


class Engine:
    """One search run over one task."""

    def __init__(
        self,
        task: TaskSpec,
        config: RunConfig,
        *,
        generator=None,
        evaluator=None,
        journal_path=None,
        run_dir=None,
        transcript_cache: Optional[dict] = None,
        trace_hook: Optional[Callable[..., None]] = None,
    ) -> None:
        config.validate()
        self.task = task
        self.config = config
        self.tree = SearchTree(max_children=config.max_children, c_uct=config.c_uct)
        self.tree.set_root_capacity(config.num_workers)
        self.journal = JournalWriter(journal_path)
        self.run_dir = run_dir
        self.generator = generator if generator is not None else self._default_generator()
        self.evaluator = evaluator if evaluator is not None else self._default_evaluator()
        self.cache = transcript_cache or {}
        self.trace_hook = trace_hook
        self.slots: dict[str, WorkerSlot] = {}
        self.improvement_curve: list[tuple[float, float]] = []
        self._clock: Callable[[], float] = lambda: 0.0
        self._notify: Callable[[], None] = lambda: None
        self._steps_started = 0
        self._steps_committed = 0
        self._wall_cut = False
        self._steps_cut = False
        self._drafts_expected = config.num_workers
        self._draft_ids: list[int] = []
        self._bootstrap_complete = False
        self._alive: set[str] = set()

    # -- wiring ---------------------------------------------------------------

    def _default_generator(self):
        if self.config.backend is None:
            return ScriptedGenerator()
        return HttpChatBackend(self.config.backend)

    def _default_evaluator(self):
        if self.config.simulated:
            return SimulatedEvaluator(self.config.landscape, self.task.metric_direction)
        if self.run_dir is None:
            raise ValueError("live runs need a run_dir for sandbox workspaces")
        return SandboxEvaluator(self.task, self.run_dir, timeout=self.config.per_exec_timeout)

    @property
    def run_id(self) -> str:
        return f"{self.task.task_id}-s{self.config.seed}"

    def _trace(self, event: str, **data) -> None:
        if self.trace_hook is not None:
            self.trace_hook(event, **data)

    # -- run ------------------------------------------------------------------

    def run(self, *, driver: str = "virtual") -> RunReport:
        """Execute the full budgeted search and return the final report."""
        self.journal.append(
            KIND_HEADER,
            None,
            {
                "version": JOURNAL_VERSION,
                "run_id": self.run_id,
                "seed": self.config.seed,
                "mode": "simulated" if self.config.simulated else "live",
                "config": self.config.to_dict(),
                "task": self.task.to_dict(),
            },
            ts=0.0,
        )
        if driver == "virtual":
            duration_fn = None
            if self.config.simulated:
                landscape = self.config.landscape

                def duration_fn(op: str, key: str) -> float:
                    gen, exe = simulate_durations(key, landscape)
                    return gen if op == "generate" else exe

            engine_driver = VirtualDriver(
                wall_clock_limit=self.config.wall_clock_limit, duration_fn=duration_fn
            )
        elif driver == "thread":
            engine_driver = ThreadDriver(wall_clock_limit=self.config.wall_clock_limit)
        else:
            raise ValueError(f"unknown driver {driver!r}")
        self._clock = engine_driver.clock
        self._notify = engine_driver.notify
        workers = {}
        for widx in range(self.config.num_workers):
            wid = f"w{widx}"
            self.slots[wid] = WorkerSlot(worker_id=wid)
            self._alive.add(wid)
            workers[widx] = self._worker(widx)
        try:
            engine_driver.run(workers)
        except BaseException:
            self.journal.close()
            raise
        if self._wall_cut:
            reason = "wall_clock"
        elif self._steps_cut:
            reason = "max_steps"
        else:
            reason = "tree_exhausted"
        self.journal.append(
            KIND_BUDGET_END,
            None,
            {"reason": reason, "steps": self._steps_committed},
            ts=self._clock(),
        )
        report = derive_report(self.journal.events, tree=self.tree)
        self.journal.close()
        return report

    # -- budget ----------------------------------------------------------------

    def _reserve_step(self) -> bool:
        with self.tree._lock:
            if self.config.max_steps is not None and self._steps_started >= self.config.max_steps:
                self._steps_cut = True
                return False
            self._steps_started += 1
            return True

    def _unreserve_step(self) -> None:
        with self.tree._lock:
            self._steps_started -= 1

    # -- worker loop ------------------------------------------------------------

    def _worker(self, widx: int) -> Generator[tuple, object, None]:
        wid = f"w{widx}"
        slot = self.slots[wid]
        try:
            outcome = yield from self._step(wid, ROOT_ID)
            if outcome in (_CUT, _CRASH):
                self._alive.discard(wid)
                self._bootstrap_account(draft_lost=True)
                return
            self._bootstrap_account(draft_lost=False)
            while not self._bootstrap_complete:
                self._trace("park", worker=wid, phase="bootstrap")
                yield ("park",)
            slot.state = "searching"
            burst_target: Optional[int] = None
            burst_len = 0
            while True:
                if self._clock() >= self.config.wall_clock_limit:
                    self._wall_cut = True
                    self._release_held(wid, "budget")
                    return
                if slot.current_entry is None:
                    burst_target, burst_len = None, 0
                    claimed = self.tree.claim_branch(wid, at=self._clock())
                    if claimed is None:
                        if self.tree.all_branches_terminal():
                            return
                        self._trace(
                            "park",
                            worker=wid,
                            phase="search",
                            claimable=len(self.tree.claimable_branches()),
                        )
                        yield ("park",)
                        continue
                    slot.current_entry = claimed
                    self.journal.append(
                        KIND_CLAIM, claimed, {"branch": claimed, "worker": wid}, ts=self._clock()
                    )
                    self._trace("claim", worker=wid, branch=claimed)
                if burst_target is not None:
                    target_id: Optional[int] = burst_target
                    burst_target = None
                    if self.tree.node(target_id).is_terminal:
                        target_id = None
                        burst_len = 0
                else:
                    burst_len = 0
                    path = self.tree.select_leaf(slot.current_entry, for_worker=wid)
                    target_id = path[-1] if path else None
                if target_id is None:
                    self._release_held(wid, "exhausted")
                    continue
                outcome = yield from self._step(wid, target_id)
                if outcome == _CUT:
                    self._release_held(wid, "budget")
                    return
                if outcome == _CRASH:
                    self._release_held(wid, "crash")
                    return
                node, action = outcome
                slot.steps_taken += 1
                if (
                    action is ActionKind.DEBUG
                    and node.health is NodeStatus.BUGGY
                    and not node.is_terminal
                    and burst_len + 1 < self.config.debug_chain_cap
                ):
                    burst_target = node.id
                    burst_len += 1
                else:
                    burst_target = None
                    burst_len = 0
        finally:
            self._alive.discard(wid)
            slot.state = "draining"

    def _release_held(self, wid: str, reason: str) -> None:
        slot = self.slots[wid]
        if slot.current_entry is None:
            return
        branch = slot.current_entry
        slot.current_entry = None
        self.tree.release(branch, wid)
        self.journal.append(
            KIND_RELEASE, branch, {"branch": branch, "worker": wid, "reason": reason},
            ts=self._clock(),
        )
        self._trace("release", worker=wid, branch=branch, reason=reason)
        self._notify()

    # -- one expansion step ------------------------------------------------------

    def _step(self, wid: str, target_id: int):
        """Select-time setup, the two io waits, and the commit. Returns
        (node, action), _CUT, or _CRASH."""
        if not self._reserve_step():
            return _CUT
        # Select-time snapshot: everything the prompt depends on is taken
        # under one lock so the journaled snapshot_seq is exact.
        with self.tree._lock:
            target = self.tree.node(target_id)
            action = self.tree.decide_action(
                target_id,
                t_improve=self.config.t_improve,
                tau_improve=self.config.tau_improve,
                tau_debug=self.config.tau_debug,
            )
            slot_idx = self.tree.reserve_child_slot(target_id)
            key = node_key(target.key, action, slot_idx)
            snapshot_seq = self.journal.last_seq
            context = memory_mod.build_memory(self.tree, target_id)
            instruction, think_seed = memory_mod.render_context(
                context,
                self.task,
                action,
                context_cap=self.config.memory_caps.context_chars,
            )
        request = GenerationRequest(
            instruction=instruction,
            think_seed=think_seed,
            action=action,
            prior_code=target.code if action is not ActionKind.DRAFT else None,
            decoding=self.config.decoding,
            node_key=key,
        )
        request.validate()

        gen_payload = yield ("io", key, "generate", self._generation_thunk(key, request))
        if gen_payload is BUDGET_CUT:
            self._unreserve_step()
            self._wall_cut = True
            return _CUT
        if isinstance(gen_payload, WorkerCrash):
            self._unreserve_step()
            logger.warning("worker %s crashed during generation: %s", wid, gen_payload.error)
            return _CRASH

        response: Optional[GenerationResponse] = None
        gen_error: Optional[GenerationError] = None
        result: Optional[ExecutionResult] = None
        if isinstance(gen_payload, GenerationError):
            gen_error = gen_payload
        else:
            response = gen_payload
            exec_payload = yield (
                "io",
                key,
                "execute",
                self._execution_thunk(key, action, response.code),
            )
            if exec_payload is BUDGET_CUT:
                self._unreserve_step()
                self._wall_cut = True
                return _CUT
            if isinstance(exec_payload, WorkerCrash):
                self._unreserve_step()
                logger.warning("worker %s crashed during execution: %s", wid, exec_payload.error)
                return _CRASH
            result = exec_payload

        node = self._commit(
            wid=wid,
            target_id=target_id,
            action=action,
            key=key,
            slot_idx=slot_idx,
            snapshot_seq=snapshot_seq,
            instruction=instruction,
            think_seed=think_seed,
            response=response,
            gen_error=gen_error,
            result=result,
        )
        return node, action

    def _generation_thunk(self, key: str, request: GenerationRequest):
        def thunk():
            cached = self.cache.get(key)
            if cached is not None:
                if "generation" in cached:
                    return GenerationResponse.from_dict(cached["generation"])
                if "generation_error" in cached:
                    err = cached["generation_error"]
                    return GenerationError(err["kind"], err["message"])
            try:
                return self.generator.generate(request)
            except GenerationError as exc:
                return exc

        return thunk

    def _execution_thunk(self, key: str, action: ActionKind, code: str):
        def thunk():
            cached = self.cache.get(key)
            if cached is not None and "execution" in cached:
                return ExecutionResult.from_dict(cached["execution"])
            return self.evaluator.evaluate(key, action, code)

        return thunk

    # -- commit --------------------------------------------------------------

    def _commit(
        self,
        *,
        wid: str,
        target_id: int,
        action: ActionKind,
        key: str,
        slot_idx: int,
        snapshot_seq: int,
        instruction: str,
        think_seed: str,
        response: Optional[GenerationResponse],
        gen_error: Optional[GenerationError],
        result: Optional[ExecutionResult],
    ) -> SolutionNode:
        """Apply one verified expansion atomically: node, records, reward,
        statistics, terminal marks, and their journal events."""
        ts = self._clock()
        with self.tree._lock:
            target = self.tree.node(target_id)
            healthy = (
                result is not None
                and result.is_success
                and result.submission_present
                and result.metric is not None
            )
            health = NodeStatus.VALID if healthy else NodeStatus.BUGGY
            metric = result.metric if healthy and result is not None else None
            delta: Optional[float] = None
            if action is ActionKind.IMPROVE:
                best_ancestor = self.tree.best_ancestor_metric(target_id)
                if metric is not None and best_ancestor is not None:
                    delta = relative_improvement(metric, best_ancestor)
            node = self.tree.add_node(
                target_id,
                action=action,
                health=health,
                plan=response.plan if response else "",
                code=response.code if response else "",
                metric=metric,
                improve_delta=delta,
                slot=slot_idx,
            )
            node.insight = (
                memory_mod.extract_insights(
                    response.trace,
                    source_node=node.id,
                    cap=self.config.memory_caps.insight_chars,
                )
                if response
                else None
            )
            node.feedback = memory_mod.collect_feedback(
                result,
                source_node=node.id,
                log_lines=self.config.memory_caps.log_lines,
                generation_error=str(gen_error) if gen_error else None,
            )
            gen_payload = {
                "node_key": key,
                "worker": wid,
                "action": action.value,
                "snapshot_seq": snapshot_seq,
                "instruction": instruction,
                "think_seed": think_seed,
                "ok": gen_error is None,
            }
            if response is not None:
                gen_payload["response"] = response.to_dict()
            else:
                gen_payload["error"] = str(gen_error)
                gen_payload["error_kind"] = gen_error.kind if gen_error else "unknown"
            self.journal.append(KIND_GENERATION, node.id, gen_payload, ts=ts)
            if result is not None:
                self.journal.append(
                    KIND_EXECUTION,
                    node.id,
                    {"node_key": key, "worker": wid, "result": result.to_dict()},
                    ts=ts,
                )
            self.journal.append(
                KIND_EXPANSION, node.id, {"worker": wid, "node": node.to_dict()}, ts=ts
            )
            best_before = self.tree.best_metric
            reward = compute_reward(
                node,
                target,
                result,
                best_before,
                improve_target=self.config.t_improve,
            )
            self.journal.append(
                KIND_REWARD,
                node.id,
                {
                    **reward.to_dict(),
                    "best_before": best_before.to_dict() if best_before else None,
                    "delta": delta,
                },
                ts=ts,
            )
            if action is ActionKind.IMPROVE:
                self.tree.record_improve_attempt(target_id, delta, self.config.t_improve)
            if self.tree.observe_metric(node):
                assert node.metric is not None
                self.improvement_curve.append((ts, node.metric.value))
            path = [node.id]
            cursor = node
            while cursor.parent_id is not None:
                path.append(cursor.parent_id)
                cursor = self.tree.node(cursor.parent_id)
            self.tree.backpropagate(path, reward.total)
            self.journal.append(
                KIND_BACKPROP, node.id, {"path": path, "reward": reward.total}, ts=ts
            )
            marks: list[tuple[int, TerminalReason]] = []
            if check_debug_termination(node, self.config.tau_debug):
                marks.extend(self.tree.mark_terminal(node.id, TerminalReason.DEBUG_DEPTH))
            if not target.is_terminal and check_improve_termination(
                target, self.config.t_improve, self.config.tau_improve
            ):
                marks.extend(
                    self.tree.mark_terminal(target_id, TerminalReason.IMPROVE_STAGNATION)
                )
            for marked_id, reason in marks:
                self.journal.append(
                    KIND_TERMINAL, marked_id, {"node": marked_id, "reason": reason.value}, ts=ts
                )
            self._steps_committed += 1
            if action is ActionKind.DRAFT:
                self._draft_ids.append(node.id)
        if marks:
            self._notify()
        self._trace("expand", worker=wid, node=node.id, key=key, action=action.value)
        return node

    # -- bootstrap -------------------------------------------------------------

    def _bootstrap_account(self, *, draft_lost: bool) -> None:
        """Track draft completion; the last draft to land finishes bootstrap."""
        with self.tree._lock:
            if draft_lost:
                self._drafts_expected -= 1
            finished = (
                not self._bootstrap_complete
                and len(self._draft_ids) >= self._drafts_expected
            )
            if not finished:
                return
            self._bootstrap_complete = True
            ts = self._clock()
            entries: list[int] = []
            if self.tree.fully_expanded(self.tree.root):
                entries = self.tree.pick_entry_points(self.config.effective_top_k)
            self.journal.append(
                KIND_BOOTSTRAP,
                None,
                {
                    "num_workers": self.config.num_workers,
                    "drafts": list(self._draft_ids),
                    "entries": entries,
                },
                ts=ts,
            )
            recipients = sorted(self._alive, key=lambda w: int(w[1:]))
            for wid, entry in zip(recipients, entries):
                if self.tree.claim(entry, wid, at=ts):
                    self.slots[wid].current_entry = entry
                    self.journal.append(
                        KIND_CLAIM, entry, {"branch": entry, "worker": wid}, ts=ts
                    )
                    self._trace("claim", worker=wid, branch=entry)
        self._notify()


def run_search(
    task: TaskSpec,
    config: RunConfig,
    *,
    generator=None,
    evaluator=None,
    journal_path=None,
    run_dir=None,
    driver: str = "virtual",
    trace_hook=None,
) -> tuple[RunReport, Engine]:
    """Convenience wrapper: build an engine, run it, return (report, engine)."""
    engine = Engine(
        task,
        config,
        generator=generator,
        evaluator=evaluator,
        journal_path=journal_path,
        run_dir=run_dir,
        trace_hook=trace_hook,
    )
    report = engine.run(driver=driver)
    return report, engine


def resume_search(
    journal_path,
    task: TaskSpec,
    config: RunConfig,
    *,
    generator=None,
    evaluator=None,
    new_journal_path=None,
    driver: str = "virtual",
    run_dir=None,
) -> tuple[RunReport, Engine]:
    """Continue a run under a (typically larger) budget.

    The engine re-derives the whole search deterministically from the seed,
    serving every generation and execution that the old journal already paid
    for from its transcripts; only work past the old frontier reaches the
    backends. With a scripted backend and the same seed the resumed journal is
    byte-identical to an uninterrupted run at the new budget.
    """
    events, _warnings = read_journal(journal_path)
    cache = build_transcript_cache(events)
    engine = Engine(
        task,
        config,
        generator=generator,
        evaluator=evaluator,
        journal_path=new_journal_path,
        run_dir=run_dir,
        transcript_cache=cache,
    )
    report = engine.run(driver=driver)
    return report, engine
