"""branchwork: branch-parallel tree search over draft/debug/improve solutions."""

from .backends import (
    BackendConfig,
    DecodingParams,
    GenerationError,
    GenerationRequest,
    GenerationResponse,
    HttpChatBackend,
    ScriptedGenerator,
    ScriptedReply,
    parse_plan_and_code,
)
from .config import ConfigError, MemoryCaps, RunConfig, TaskSpec, load_run_config, load_task_spec
from .engine import Engine, SandboxEvaluator, resume_search, run_search
from .journal import JournalEvent, JournalWriter, read_journal, replay_tree
from .landscape import Distribution, SimulatedEvaluator, SyntheticLandscape, simulate_execute
from .memory import (
    FeedbackRecord,
    InsightRecord,
    MemoryContext,
    ReasoningTrace,
    build_memory,
    collect_feedback,
    extract_insights,
    render_context,
)
from .report import RunReport, derive_report, export_best, write_report_files
from .sandbox import ExecutionResult, ExitStatus, Workspace, execute, parse_metric
from .scheduler import BranchClaim, SearchBudget, WorkerSlot, claim_branch, pick_entry_points
from .tree import (
    ActionKind,
    MetricDirection,
    MetricValue,
    NodeStatus,
    RewardBreakdown,
    SearchTree,
    SolutionNode,
    TerminalReason,
    check_debug_termination,
    check_improve_termination,
    compute_reward,
    uct_score,
)

__version__ = "0.1.0"
