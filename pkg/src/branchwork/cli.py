"""Command-line entry point.

Subcommands:
  run     execute a budgeted search for a task (live backend or simulated)
  resume  continue a journaled run under a larger budget, reusing transcripts
  replay  rebuild the tree from a journal and print integrity checks
  report  derive the run report; writes JSON + CSV + PNG figure
  export  write the best solution bundle from a journal

Flag precedence for ``run``: command line over config file over defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, load_run_config, load_task_spec
from .engine import resume_search, run_search
from .journal import read_journal, replay_tree
from .report import derive_report, export_best, write_report_files

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchwork",
        description="Branch-parallel draft/debug/improve search over candidate solutions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a budgeted search for a task")
    run_p.add_argument("--task", required=True, help="path to the task spec JSON")
    run_p.add_argument("--config", help="path to a run config JSON")
    run_p.add_argument("--seed", type=int, help="search seed")
    run_p.add_argument("--budget", type=float, help="wall clock limit in seconds")
    run_p.add_argument("--workers", type=int, help="parallel worker count")
    run_p.add_argument("--max-steps", type=int, help="cap on expansions")
    run_p.add_argument("--backend", help="path to a backend config JSON (live mode)")
    run_p.add_argument(
        "--simulate",
        action="store_true",
        help="use the scripted generator and synthetic landscape (no network)",
    )
    run_p.add_argument("--out", default="runs", help="directory for journal and report")

    resume_p = sub.add_parser("resume", help="continue a run under a larger budget")
    resume_p.add_argument("--journal", required=True, help="journal of the interrupted run")
    resume_p.add_argument("--task", required=True, help="path to the task spec JSON")
    resume_p.add_argument("--budget", type=float, required=True, help="new wall clock limit")
    resume_p.add_argument("--out", default="runs", help="directory for the resumed run")

    replay_p = sub.add_parser("replay", help="rebuild a tree from a journal and verify it")
    replay_p.add_argument("--journal", required=True)

    report_p = sub.add_parser("report", help="derive the run report from a journal")
    report_p.add_argument("--journal", required=True)
    report_p.add_argument("--out", help="directory for report files (default: journal's dir)")

    export_p = sub.add_parser("export", help="export the best solution bundle")
    export_p.add_argument("--journal", required=True)
    export_p.add_argument("--out", required=True)
    export_p.add_argument("--run-dir", help="run directory holding node workspaces")
    return parser


def _load_config(args: argparse.Namespace) -> RunConfig:
    import dataclasses

    config = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "backend", None):
        from .backends import BackendConfig

        backend_data = json.loads(Path(args.backend).read_text(encoding="utf-8"))
        config = apply_overrides(config, backend=BackendConfig.from_dict(backend_data))
    if getattr(args, "simulate", False) and config.backend is not None:
        # --simulate wins over a backend from the config file; None means
        # simulated, so this cannot go through the None-filtering overrides.
        config = dataclasses.replace(config, backend=None)
    return apply_overrides(
        config,
        seed=getattr(args, "seed", None),
        wall_clock_limit=getattr(args, "budget", None),
        num_workers=getattr(args, "workers", None),
        max_steps=getattr(args, "max_steps", None),
    )


def _cmd_run(args: argparse.Namespace) -> int:
    task = load_task_spec(args.task)
    config = _load_config(args)
    run_dir = Path(args.out) / f"{task.task_id}-s{config.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    journal_path = run_dir / "journal.jsonl"
    driver = "virtual" if config.simulated else "thread"
    report, _engine = run_search(
        task,
        config,
        journal_path=journal_path,
        run_dir=run_dir,
        driver=driver,
    )
    write_report_files(report, run_dir)
    _print_summary(report, journal_path)
    return 0


def _cmd_resume(args: argparse.Namespace) -> int:
    task = load_task_spec(args.task)
    events, _ = read_journal(args.journal)
    header = next((e.payload for e in events if e.kind == "header"), None)
    if header is None:
        print("error: journal has no header", file=sys.stderr)
        return 2
    config = apply_overrides(
        RunConfig.from_dict(header["config"]), wall_clock_limit=args.budget
    )
    run_dir = Path(args.out) / f"{task.task_id}-s{config.seed}-resumed"
    run_dir.mkdir(parents=True, exist_ok=True)
    journal_path = run_dir / "journal.jsonl"
    driver = "virtual" if config.simulated else "thread"
    report, _engine = resume_search(
        args.journal,
        task,
        config,
        new_journal_path=journal_path,
        run_dir=run_dir,
        driver=driver,
    )
    write_report_files(report, run_dir)
    _print_summary(report, journal_path)
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    events, warnings = read_journal(args.journal)
    state = replay_tree(events)
    tree = state.tree
    root = tree.root
    checks = {
        "events": len(events),
        "nodes": len(tree) - 1,
        "root_visits": root.visit_count,
        "verifications": state.verification_count,
        "root_reward": root.total_reward,
        "reward_sum": state.reward_sum,
        "claims_open": len(tree.active_claims()),
        "statistics_consistent": (
            root.visit_count == state.verification_count
            and abs(root.total_reward - state.reward_sum) < 1e-9
        ),
    }
    for name, value in checks.items():
        print(f"{name}: {value}")
    for warning in warnings:
        print(f"warning: {warning}")
    return 0 if checks["statistics_consistent"] and not tree.active_claims() else 1


def _cmd_report(args: argparse.Namespace) -> int:
    events, _ = read_journal(args.journal)
    report = derive_report(events)
    out_dir = Path(args.out) if args.out else Path(args.journal).parent
    paths = write_report_files(report, out_dir)
    _print_summary(report, Path(args.journal))
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    events, _ = read_journal(args.journal)
    try:
        metadata = export_best(events, args.out, run_dir=args.run_dir)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(metadata, indent=2, sort_keys=True))
    return 0


def _print_summary(report, journal_path) -> None:
    best = report.best_metric.value if report.best_metric else None
    print(f"run: {report.run_id}")
    print(f"journal: {journal_path}")
    print(f"nodes: {report.total_nodes} (by action: {report.node_counts_by_action})")
    print(f"best metric: {best} (node {report.best_node_id})")
    print(f"valid submission: {report.valid_submission}")
    print(f"ended: {report.budget_reason} after {report.elapsed:.1f}s")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "resume": _cmd_resume,
        "replay": _cmd_replay,
        "report": _cmd_report,
        "export": _cmd_export,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        for error in exc.errors:
            print(f"config error: {error}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
