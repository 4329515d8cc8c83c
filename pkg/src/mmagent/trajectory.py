"""Tasks, ReAct trajectories and their JSONL persistence.

A trajectory is built step by step with :class:`TrajectoryBuilder` and sealed
into an immutable :class:`Trajectory` by :meth:`TrajectoryBuilder.finalize`.
Records serialize to one JSON object per line with a fixed key order, so two
runs that produce the same records produce the same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Union

SCHEMA_VERSION = 1

TOOL_NAMES = ("text_search", "image_search", "visit")


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"
    BENCHMARK = "benchmark"


class Source(str, Enum):
    SYNTHESIZED = "synthesized"
    EXTERNAL_BENCHMARK = "external_benchmark"


class Termination(str, Enum):
    ANSWERED = "answered"
    FORMAT_VIOLATION = "format_violation"
    STEP_LIMIT = "step_limit"
    TIMEOUT = "timeout"
    CONTEXT_OVERFLOW = "context_overflow"
    TOOL_ERROR = "tool_error"


class TrajectoryError(ValueError):
    pass


class AlreadyFinalized(TrajectoryError):
    pass


class ObservationMismatch(TrajectoryError):
    pass


class AnswerMissing(TrajectoryError):
    pass


class AnswerOnNonAnswered(TrajectoryError):
    pass


class MalformedLine(TrajectoryError):
    pass


class SchemaVersionMismatch(MalformedLine):
    pass


# --------------------------------------------------------------------------
# Actions


@dataclass(frozen=True)
class ToolInvocation:
    name: str
    arguments: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "tool_call", "name": self.name, "arguments": self.arguments}


@dataclass(frozen=True)
class FinalAnswer:
    text: str

    def to_dict(self) -> dict[str, Any]:
        return {"type": "answer", "text": self.text}


AgentAction = Union[ToolInvocation, FinalAnswer]


def action_from_dict(d: dict[str, Any]) -> AgentAction:
    kind = d.get("type")
    if kind == "tool_call":
        if not isinstance(d.get("name"), str) or not isinstance(d.get("arguments", {}), dict):
            raise MalformedLine(f"bad tool_call action: {d!r}")
        return ToolInvocation(d["name"], dict(d.get("arguments", {})))
    if kind == "answer":
        if not isinstance(d.get("text"), str):
            raise MalformedLine(f"bad answer action: {d!r}")
        return FinalAnswer(d["text"])
    raise MalformedLine(f"unknown action type {kind!r}")


# --------------------------------------------------------------------------
# Tasks


@dataclass(frozen=True)
class Provenance:
    """Compact pointer into a synthesis record.

    ``hidden_entities`` lists the entity hidden in each injection round, in
    round order; ``image_entity`` is the entity replaced by the task image.
    """

    record_id: str
    seed_entity: str
    level: str
    hidden_entities: tuple[str, ...] = ()
    image_entity: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "seed_entity": self.seed_entity,
            "level": self.level,
            "hidden_entities": list(self.hidden_entities),
            "image_entity": self.image_entity,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Provenance":
        return cls(
            record_id=d["record_id"],
            seed_entity=d["seed_entity"],
            level=d["level"],
            hidden_entities=tuple(d.get("hidden_entities", ())),
            image_entity=d.get("image_entity"),
        )


@dataclass(frozen=True)
class Task:
    task_id: str
    question_text: str
    gold_answer: str
    difficulty: Difficulty = Difficulty.BENCHMARK
    image_ref: str | None = None
    source: Source = Source.SYNTHESIZED
    provenance: Provenance | None = None

    def __post_init__(self) -> None:
        if self.source is Source.SYNTHESIZED and not self.gold_answer.strip():
            raise ValueError(f"synthesized task {self.task_id} has an empty gold answer")

    @property
    def multimodal(self) -> bool:
        return self.image_ref is not None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "task_id": self.task_id,
            "question_text": self.question_text,
            "image_ref": self.image_ref,
            "gold_answer": self.gold_answer,
            "difficulty": self.difficulty.value,
            "source": self.source.value,
        }
        if self.provenance is not None:
            d["provenance"] = self.provenance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Task":
        prov = d.get("provenance")
        return cls(
            task_id=str(d["task_id"]),
            question_text=d["question_text"],
            gold_answer=d["gold_answer"],
            difficulty=Difficulty(d.get("difficulty", "benchmark")),
            image_ref=d.get("image_ref"),
            source=Source(d.get("source", "synthesized")),
            provenance=Provenance.from_dict(prov) if prov else None,
        )


# --------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class StepRecord:
    index: int
    thought: str
    action: AgentAction
    observation: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "thought": self.thought,
            "action": self.action.to_dict(),
            "observation": self.observation,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StepRecord":
        return cls(int(d["index"]), d["thought"], action_from_dict(d["action"]), d.get("observation"))


@dataclass(frozen=True)
class TokenAccounting:
    prompt_tokens: int
    response_tokens: int

    def to_dict(self) -> dict[str, int]:
        return {"prompt_tokens": self.prompt_tokens, "response_tokens": self.response_tokens}


@dataclass(frozen=True)
class Trajectory:
    """Finalized, immutable ReAct episode."""

    task_id: str
    steps: tuple[StepRecord, ...]
    termination: Termination
    final_answer: str | None = None
    wall_time: float = 0.0
    token_accounting: TokenAccounting | None = None
    sample_index: int = 0
    detail: str | None = None  # why a non-answered run stopped, e.g. the violation kind

    def __post_init__(self) -> None:
        validate(self)

    @property
    def ref(self) -> str:
        return f"{self.task_id}#{self.sample_index}"

    @property
    def answered(self) -> bool:
        return self.termination is Termination.ANSWERED

    def tool_steps(self) -> list[StepRecord]:
        return [s for s in self.steps if isinstance(s.action, ToolInvocation)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "task_id": self.task_id,
            "sample_index": self.sample_index,
            "steps": [s.to_dict() for s in self.steps],
            "termination": self.termination.value,
            "final_answer": self.final_answer,
            "wall_time": self.wall_time,
            "token_accounting": self.token_accounting.to_dict() if self.token_accounting else None,
            "detail": self.detail,
        }


def validate(traj: Trajectory) -> None:
    for i, step in enumerate(traj.steps):
        if step.index != i:
            raise TrajectoryError(f"step indices not contiguous at position {i}")
        is_tool = isinstance(step.action, ToolInvocation)
        if is_tool != (step.observation is not None):
            raise ObservationMismatch(f"step {i}: observation presence does not match action kind")
        if isinstance(step.action, FinalAnswer) and i != len(traj.steps) - 1:
            raise TrajectoryError("final answer is only allowed at the last step")
    ends_in_answer = bool(traj.steps) and isinstance(traj.steps[-1].action, FinalAnswer)
    if traj.termination is Termination.ANSWERED:
        if traj.final_answer is None:
            raise AnswerMissing("answered trajectory needs a final answer")
        if not ends_in_answer:
            raise TrajectoryError("answered trajectory must end with a FinalAnswer step")
    else:
        if traj.final_answer is not None:
            raise AnswerOnNonAnswered(f"{traj.termination.value} trajectory carries a final answer")
        if ends_in_answer:
            raise TrajectoryError("trajectory ending in a FinalAnswer must be terminated as answered")


class TrajectoryBuilder:
    """Single-owner, append-only trajectory under construction."""

    def __init__(self, task_id: str, sample_index: int = 0) -> None:
        self.task_id = task_id
        self.sample_index = sample_index
        self.steps: list[StepRecord] = []
        self._final: Trajectory | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def finalized(self) -> bool:
        return self._final is not None

    def append_step(self, thought: str, action: AgentAction, observation: str | None = None) -> "TrajectoryBuilder":
        if self._final is not None:
            raise AlreadyFinalized(self.task_id)
        if self.steps and isinstance(self.steps[-1].action, FinalAnswer):
            raise AlreadyFinalized(f"{self.task_id}: a final answer was already recorded")
        if isinstance(action, FinalAnswer) and observation is not None:
            raise ObservationMismatch("observation supplied with a final answer")
        if isinstance(action, ToolInvocation) and observation is None:
            raise ObservationMismatch("tool call without an observation")
        self.steps.append(StepRecord(len(self.steps), thought, action, observation))
        return self

    def finalize(
        self,
        termination: Termination,
        final_answer: str | None = None,
        *,
        wall_time: float = 0.0,
        token_accounting: TokenAccounting | None = None,
        detail: str | None = None,
    ) -> Trajectory:
        if self._final is not None:
            raise AlreadyFinalized(self.task_id)
        if termination is Termination.ANSWERED and final_answer is None:
            raise AnswerMissing(self.task_id)
        if termination is not Termination.ANSWERED and final_answer is not None:
            raise AnswerOnNonAnswered(self.task_id)
        self._final = Trajectory(
            task_id=self.task_id,
            steps=tuple(self.steps),
            termination=termination,
            final_answer=final_answer,
            wall_time=wall_time,
            token_accounting=token_accounting,
            sample_index=self.sample_index,
            detail=detail,
        )
        return self._final


# --------------------------------------------------------------------------
# JSONL


def dumps_line(obj: Any) -> str:
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def serialize(traj: Trajectory) -> str:
    return dumps_line(traj)


def deserialize(line: str) -> Trajectory:
    try:
        d = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(str(exc)) from exc
    if not isinstance(d, dict):
        raise MalformedLine("trajectory line is not a JSON object")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"schema_version {d.get('schema_version')!r} != {SCHEMA_VERSION}")
    try:
        termination = Termination(d["termination"])
    except ValueError as exc:
        raise SchemaVersionMismatch(f"unknown termination {d['termination']!r}") from exc
    except KeyError as exc:
        raise MalformedLine("missing termination") from exc
    try:
        acc = d.get("token_accounting")
        return Trajectory(
            task_id=str(d["task_id"]),
            steps=tuple(StepRecord.from_dict(s) for s in d["steps"]),
            termination=termination,
            final_answer=d.get("final_answer"),
            wall_time=float(d["wall_time"]),
            token_accounting=TokenAccounting(int(acc["prompt_tokens"]), int(acc["response_tokens"])) if acc else None,
            sample_index=int(d.get("sample_index", 0)),
            detail=d.get("detail"),
        )
    except TrajectoryError as exc:
        if isinstance(exc, MalformedLine):
            raise
        raise MalformedLine(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedLine(f"bad trajectory record: {exc}") from exc


def write_jsonl(path: str | Path, records: Iterable[Any]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_line(rec))
            fh.write("\n")
            n += 1
    return n


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line


def read_trajectories(path: str | Path) -> list[Trajectory]:
    out = []
    for lineno, line in iter_jsonl(path):
        try:
            out.append(deserialize(line))
        except MalformedLine as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from exc
    return out


def read_tasks(path: str | Path) -> list[Task]:
    out = []
    for lineno, line in iter_jsonl(path):
        try:
            out.append(Task.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedLine(f"{path}:{lineno}: {exc}") from exc
    return out
