"""The ReAct rollout loop, single trajectories and concurrent groups."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import platform
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Protocol, Sequence

from . import __version__, prompts
from .backends import SamplingParams
from .grammar import FormatViolation, parse_response, render_system_prompt, render_tool_response
from .tools.gateway import TaskContext, ToolGateway
from .trajectory import FinalAnswer, Task, Termination, TokenAccounting, Trajectory, TrajectoryBuilder

log = logging.getLogger(__name__)


class Tokenizer(Protocol):
    def count(self, text: str) -> int: ...


class WhitespaceEstimator:
    """Whitespace pieces times a safety factor; a stand-in for a real tokenizer."""

    def __init__(self, factor: float = 1.3) -> None:
        self.factor = factor

    def count(self, text: str) -> int:
        return math.ceil(len(text.split()) * self.factor)


@dataclass(frozen=True)
class RolloutConfig:
    max_steps: int = 30
    trajectory_timeout: float = 9000.0  # seconds
    max_prompt_tokens: int = 2048
    max_response_tokens: int = 28672
    temperature: float = 0.6
    top_p: float = 0.9
    presence_penalty: float | None = None
    group_size: int = 8
    current_date: str = "2025-11-01"

    def __post_init__(self) -> None:
        for name in ("max_steps", "trajectory_timeout", "max_prompt_tokens", "max_response_tokens", "group_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.top_p <= 1.0 or self.temperature < 0:
            raise ValueError("bad sampling parameters")

    def sampling(self, seed: int | None = None) -> SamplingParams:
        return SamplingParams(self.temperature, self.top_p, None, self.presence_penalty, seed)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RolloutConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class LogicalClock:
    """Deterministic clock: each reading advances by ``tick`` seconds."""

    def __init__(self, tick: float = 1.0) -> None:
        self.tick = tick
        self._now = 0.0
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            now = self._now
            self._now += self.tick
            return now


def derive_seed(seed: int, *parts: Any) -> int:
    blob = "\x1f".join(str(p) for p in (seed, *parts)).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "big")


def run_trajectory(
    task: Task,
    policy: Any,
    tools: ToolGateway,
    config: RolloutConfig,
    *,
    sample_index: int = 0,
    seed: int = 0,
    tokenizer: Tokenizer | None = None,
    clock: Callable[[], float] | None = None,
    system_prompt: str | None = None,
) -> Trajectory:
    """One ReAct episode; every failure becomes a termination reason."""
    tokenizer = tokenizer or WhitespaceEstimator()
    clock = clock or time.monotonic
    start = clock()
    system = system_prompt if system_prompt is not None else render_system_prompt(config.current_date)
    messages: list[dict[str, Any]] = [{"role": "user", "content": task.question_text}]
    if task.image_ref:
        messages[0]["image"] = task.image_ref
    ctx = TaskContext(task.task_id, task.image_ref)
    params = config.sampling(derive_seed(seed, task.task_id, sample_index))
    builder = TrajectoryBuilder(task.task_id, sample_index)

    prompt_tokens = tokenizer.count(system) + tokenizer.count(task.question_text)
    response_tokens = 0

    def done(term: Termination, answer: str | None = None, detail: str | None = None) -> Trajectory:
        return builder.finalize(
            term,
            answer,
            wall_time=round(clock() - start, 6),
            token_accounting=TokenAccounting(prompt_tokens, response_tokens),
            detail=detail,
        )

    if prompt_tokens > config.max_prompt_tokens:
        return done(Termination.CONTEXT_OVERFLOW, detail=f"prompt {prompt_tokens} > {config.max_prompt_tokens} tokens")

    while True:
        if clock() - start > config.trajectory_timeout:
            return done(Termination.TIMEOUT)
        if response_tokens > config.max_response_tokens:
            return done(Termination.CONTEXT_OVERFLOW, detail=f"context {response_tokens} > {config.max_response_tokens} tokens")
        try:
            text = policy.generate(system, messages, params)
        except Exception as exc:  # any policy failure ends this trajectory only
            log.warning("policy failed on %s: %s", task.task_id, exc)
            return done(Termination.TOOL_ERROR, detail=f"policy: {type(exc).__name__}: {exc}")
        response_tokens += tokenizer.count(text)
        if clock() - start > config.trajectory_timeout:
            return done(Termination.TIMEOUT)
        if response_tokens > config.max_response_tokens:
            return done(Termination.CONTEXT_OVERFLOW, detail=f"response {response_tokens} > {config.max_response_tokens} tokens")

        parsed = parse_response(text)
        if isinstance(parsed, FormatViolation):
            return done(Termination.FORMAT_VIOLATION, detail=f"{parsed.kind.value}: {parsed.detail}")
        if isinstance(parsed.payload, FinalAnswer):
            builder.append_step(parsed.thought, parsed.payload)
            return done(Termination.ANSWERED, parsed.payload.text)

        call = parsed.payload
        try:
            result = tools.call(call.name, call.arguments, ctx)
        except Exception as exc:  # a backend bug, not a tool contract failure
            log.warning("tool backend crashed on %s: %s", task.task_id, exc)
            return done(Termination.TOOL_ERROR, detail=f"{call.name}: {type(exc).__name__}: {exc}")
        observation = render_tool_response(result)
        builder.append_step(parsed.thought, call, observation)
        if result.fatal:
            return done(Termination.TOOL_ERROR, detail=result.error)
        messages.append({"role": "assistant", "content": text})
        messages.append({"role": "tool", "content": observation})
        response_tokens += tokenizer.count(observation)
        if len(builder) >= config.max_steps:
            return done(Termination.STEP_LIMIT)


@dataclass
class RolloutGroup:
    task_id: str
    trajectories: list[Trajectory]
    rewards: list[float] | None = None
    advantages: list[float] | None = None
    validity: list[bool] = field(default_factory=list)

    def __post_init__(self) -> None:
        if any(t.task_id != self.task_id for t in self.trajectories):
            raise ValueError("all trajectories in a group must share the task_id")
        g = len(self.trajectories)
        for name in ("rewards", "advantages"):
            v = getattr(self, name)
            if v is not None and len(v) != g:
                raise ValueError(f"{name} length {len(v)} != group size {g}")


def run_group_batch(
    tasks: Sequence[Task],
    policy: Any,
    tools: ToolGateway,
    config: RolloutConfig,
    parallelism: int = 1,
    *,
    seed: int = 0,
    group_size: int | None = None,
    clock_factory: Callable[[], Callable[[], float]] | None = None,
    tokenizer: Tokenizer | None = None,
) -> Iterator[RolloutGroup]:
    """Yield one group of G trajectories per task as soon as it completes.

    With ``parallelism == 1`` groups come out in task order and each
    trajectory runs to completion before the next starts.
    ``clock_factory`` builds a fresh clock per trajectory (e.g. a
    :class:`LogicalClock` for reproducible wall times).
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    g = group_size or config.group_size
    system = render_system_prompt(config.current_date)

    def one(task: Task, i: int) -> Trajectory:
        clock = clock_factory() if clock_factory else None
        return run_trajectory(task, policy, tools, config, sample_index=i, seed=seed, tokenizer=tokenizer, clock=clock, system_prompt=system)

    if parallelism == 1:
        for task in tasks:
            yield RolloutGroup(task.task_id, [one(task, i) for i in range(g)])
        return

    pending: dict[int, dict[int, Trajectory]] = defaultdict(dict)
    with ThreadPoolExecutor(parallelism) as pool:
        futures = {pool.submit(one, t, i): (k, i) for k, t in enumerate(tasks) for i in range(g)}
        for fut in as_completed(futures):
            k, i = futures[fut]
            pending[k][i] = fut.result()
            if len(pending[k]) == g:
                done = pending.pop(k)
                yield RolloutGroup(tasks[k].task_id, [done[j] for j in range(g)])


def write_manifest(path: str | Path, *, command: str, config: dict[str, Any], backends: dict[str, str], seed: int, extra: dict[str, Any] | None = None) -> None:
    """Everything needed to reproduce a run, minus wall-clock facts."""
    manifest = {
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "backends": backends,
        "template_sha256": prompts.template_hashes(),
        "python": platform.python_version(),
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def config_dict(config: RolloutConfig) -> dict[str, Any]:
    return asdict(config)
