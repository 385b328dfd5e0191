"""Solution generators: a chat-completions HTTP client and a scripted double.

The wire contract is the plain chat-completions shape: the request carries
{model, messages, temperature, max_tokens, stop}; the response carries
{choices: [{message: {content, optional reasoning_content}}], usage}. The
think seed is always prepended to the user message under a fixed delimiter,
which keeps the memory mechanism portable across backends; when the backend
returns a reasoning channel it is preserved byte-for-byte in the trace.

Responses must end with exactly one final fenced code block; when several
blocks appear the last one is the code and everything before it is the plan.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .memory import ReasoningTrace
from .tree import ActionKind

logger = logging.getLogger(__name__)

__all__ = [
    "DecodingParams",
    "GenerationRequest",
    "GenerationResponse",
    "GenerationError",
    "Usage",
    "BackendConfig",
    "HttpChatBackend",
    "ScriptedGenerator",
    "ScriptedReply",
    "parse_plan_and_code",
]

THINK_SEED_DELIMITER = "---- exploration memory ----"

_FENCE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


class GenerationError(Exception):
    """Generation failed; ``kind`` distinguishes transport from protocol faults."""

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(message)
        self.kind = kind  # "backend-unavailable" | "malformed-generation"


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.6
    max_output_tokens: int = 8192
    stop_sequences: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "stop_sequences": list(self.stop_sequences),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DecodingParams":
        return cls(
            temperature=float(data.get("temperature", 0.6)),
            max_output_tokens=int(data.get("max_output_tokens", 8192)),
            stop_sequences=tuple(data.get("stop_sequences", ())),
        )


@dataclass
class GenerationRequest:
    """One generation call, assembled from the rendered memory context."""

    instruction: str
    think_seed: str
    action: ActionKind
    prior_code: Optional[str] = None
    decoding: DecodingParams = field(default_factory=DecodingParams)
    node_key: str = ""

    def validate(self) -> None:
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")
        needs_prior = self.action in (ActionKind.DEBUG, ActionKind.IMPROVE)
        # May be empty (a failed generation leaves no code behind) but must be
        # present for debug/improve and absent for drafts.
        if needs_prior and self.prior_code is None:
            raise ValueError(f"{self.action.value} requests must carry the prior code")
        if not needs_prior and self.prior_code is not None:
            raise ValueError("draft requests must not carry prior code")


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    completion_tokens: int

    def to_dict(self) -> dict:
        return {"prompt_tokens": self.prompt_tokens, "completion_tokens": self.completion_tokens}


@dataclass(frozen=True)
class GenerationResponse:
    trace: ReasoningTrace
    plan: str
    code: str
    usage: Usage
    backend_id: str

    def to_dict(self) -> dict:
        return {
            "trace": self.trace.to_dict(),
            "plan": self.plan,
            "code": self.code,
            "usage": self.usage.to_dict(),
            "backend_id": self.backend_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationResponse":
        return cls(
            trace=ReasoningTrace.from_dict(data["trace"]),
            plan=data["plan"],
            code=data["code"],
            usage=Usage(**data["usage"]),
            backend_id=data["backend_id"],
        )


def parse_plan_and_code(raw_response: str) -> tuple[str, str]:
    """Split a model answer into (plan, code) by the last fenced block.

    The fence language tag is stripped. Raises malformed-generation when no
    fenced block exists.
    """
    matches = list(_FENCE.finditer(raw_response))
    if not matches:
        raise GenerationError("malformed-generation", "response contains no fenced code block")
    last = matches[-1]
    code = last.group(1)
    plan = raw_response[: last.start()].strip()
    return plan, code


@dataclass
class BackendConfig:
    """Connection settings for a hosted chat-completions backend."""

    endpoint_url: str
    model_name: str
    auth_token_env_var: str = "BRANCHWORK_API_TOKEN"
    request_timeout: float = 120.0
    max_retries: int = 2
    retry_backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    rate_per_minute: Optional[float] = None

    def __post_init__(self) -> None:
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries cannot be negative")

    def to_dict(self) -> dict:
        return {
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "auth_token_env_var": self.auth_token_env_var,
            "request_timeout": self.request_timeout,
            "max_retries": self.max_retries,
            "retry_backoff": list(self.retry_backoff),
            "rate_per_minute": self.rate_per_minute,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BackendConfig":
        return cls(
            endpoint_url=data["endpoint_url"],
            model_name=data["model_name"],
            auth_token_env_var=data.get("auth_token_env_var", "BRANCHWORK_API_TOKEN"),
            request_timeout=float(data.get("request_timeout", 120.0)),
            max_retries=int(data.get("max_retries", 2)),
            retry_backoff=tuple(data.get("retry_backoff", (1.0, 2.0, 4.0))),
            rate_per_minute=data.get("rate_per_minute"),
        )


class TokenBucket:
    """Simple thread-safe rate limiter shared by all workers of one backend."""

    def __init__(self, rate_per_minute: float, sleeper: Callable[[float], None] = time.sleep) -> None:
        self._interval = 60.0 / rate_per_minute
        self._next_free = 0.0
        self._lock = threading.Lock()
        self._sleep = sleeper

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = max(0.0, self._next_free - now)
            self._next_free = max(now, self._next_free) + self._interval
        if wait > 0:
            self._sleep(wait)


class HttpChatBackend:
    """Chat-completions client with bounded retries and bearer-token auth.

    Stateless per request; safe to share across workers. Transport failures
    and retryable status codes (429, 5xx) are retried up to ``max_retries``
    times with the configured backoff schedule, then surface as
    backend-unavailable. A well-formed transport reply without a code block is
    malformed-generation and is not retried.
    """

    RETRYABLE_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        config: BackendConfig,
        *,
        sleeper: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self.backend_id = f"http:{config.model_name}"
        self._sleep = sleeper
        self._bucket = (
            TokenBucket(config.rate_per_minute, sleeper) if config.rate_per_minute else None
        )

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        request.validate()
        body = json.dumps(self._wire_request(request)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_token_env_var)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        attempts = 1 + self.config.max_retries
        last_error = "no attempt made"
        for attempt in range(attempts):
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                req = urllib.request.Request(
                    self.config.endpoint_url, data=body, headers=headers, method="POST"
                )
                with urllib.request.urlopen(req, timeout=self.config.request_timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return self._parse_wire_response(payload)
            except urllib.error.HTTPError as exc:
                last_error = f"HTTP {exc.code}"
                if exc.code not in self.RETRYABLE_STATUS:
                    raise GenerationError("backend-unavailable", last_error) from exc
            except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
                last_error = str(exc)
            if attempt < attempts - 1:
                schedule = self.config.retry_backoff
                delay = schedule[min(attempt, len(schedule) - 1)] if schedule else 0.0
                if delay > 0:
                    self._sleep(delay)
        raise GenerationError(
            "backend-unavailable", f"gave up after {attempts} attempts: {last_error}"
        )

    def _wire_request(self, request: GenerationRequest) -> dict:
        sections = []
        if request.think_seed:
            sections.append(f"{THINK_SEED_DELIMITER}\n{request.think_seed}\n{THINK_SEED_DELIMITER}")
        sections.append(request.instruction)
        if request.prior_code is not None:
            sections.append(f"Current solution:\n```python\n{request.prior_code}\n```")
        return {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": "\n\n".join(sections)}],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_output_tokens,
            "stop": list(request.decoding.stop_sequences),
        }

    def _parse_wire_response(self, payload: dict) -> GenerationResponse:
        try:
            message = payload["choices"][0]["message"]
            content = message["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GenerationError(
                "malformed-generation", f"response missing choices/message: {exc}"
            ) from exc
        reasoning = message.get("reasoning_content") or ""
        plan, code = parse_plan_and_code(content)
        usage_payload = payload.get("usage") or {}
        usage = Usage(
            prompt_tokens=int(usage_payload.get("prompt_tokens", 0)),
            completion_tokens=int(usage_payload.get("completion_tokens", 0)),
        )
        trace = ReasoningTrace(
            raw=reasoning + content, think_section=reasoning, answer_section=content
        )
        return GenerationResponse(
            trace=trace, plan=plan, code=code, usage=usage, backend_id=self.backend_id
        )


@dataclass(frozen=True)
class ScriptedReply:
    """Canned generator output for one scenario key."""

    plan: str
    code: str
    think: str = ""

    def answer(self) -> str:
        return f"{self.plan}\n\n```python\n{self.code}\n```"


def _default_reply(node_key: str, action: ActionKind) -> ScriptedReply:
    think = (
        f"Analyzing candidate {node_key or 'root'} for action {action.value}.\n"
        f"Strategy: adjust the pipeline one step at a time.\n"
        f"Decision: emit stub solution for {node_key}."
    )
    plan = f"Candidate {node_key}: {action.value} the current solution."
    code = (
        f"# stub candidate {node_key}\n"
        "print('validation_metric: 0.5')\n"
    )
    return ScriptedReply(plan=plan, code=code, think=think)


class ScriptedGenerator:
    """Deterministic generator for hermetic tests.

    The scenario table maps a node lineage key (which encodes the full action
    path) to a canned reply; unknown keys fall back to ``default`` or, absent
    that, to a deterministic stub built from the key. ``error_keys`` raise the
    configured GenerationError and ``crash_keys`` raise a bare RuntimeError,
    for fault-path tests.
    """

    backend_id = "scripted"

    def __init__(
        self,
        script: Optional[Mapping[str, ScriptedReply]] = None,
        *,
        default: Optional[ScriptedReply] = None,
        error_keys: Optional[Mapping[str, str]] = None,
        crash_keys: Optional[set[str]] = None,
    ) -> None:
        self.script = dict(script or {})
        self.default = default
        self.error_keys = dict(error_keys or {})
        self.crash_keys = set(crash_keys or ())
        self.calls: list[str] = []

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        request.validate()
        key = request.node_key
        self.calls.append(key)
        if key in self.crash_keys:
            raise RuntimeError(f"scripted crash at {key}")
        if key in self.error_keys:
            raise GenerationError(self.error_keys[key], f"scripted failure at {key}")
        reply = self.script.get(key) or self.default or _default_reply(key, request.action)
        answer = reply.answer()
        plan, code = parse_plan_and_code(answer)
        trace = ReasoningTrace(
            raw=reply.think + answer, think_section=reply.think, answer_section=answer
        )
        usage = Usage(
            prompt_tokens=(len(request.instruction) + len(request.think_seed)) // 4,
            completion_tokens=len(answer) // 4,
        )
        return GenerationResponse(
            trace=trace, plan=plan, code=code, usage=usage, backend_id=self.backend_id
        )
