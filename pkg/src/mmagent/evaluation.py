"""Benchmark loading, evaluation reports and tool-call analytics."""

from __future__ import annotations

import csv
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .judge import Judgment, JudgeBackendFailure, judge_answer
from .react import RolloutConfig, run_group_batch
from .tools.gateway import ToolGateway
from .trajectory import TOOL_NAMES, Task, Termination, Trajectory, iter_jsonl

log = logging.getLogger(__name__)


class SchemaError(ValueError):
    pass


class EmptyAfterFilter(ValueError):
    pass


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    path: str
    image_only_filter: bool = False
    sample_limit: int | None = None
    seed: int = 0


def load_benchmark(spec: BenchmarkSpec) -> list[Task]:
    """Tasks in file order after the image filter and optional seeded subsampling."""
    tasks = []
    for lineno, line in iter_jsonl(spec.path):
        try:
            d = json.loads(line)
            if not isinstance(d, dict):
                raise TypeError("line is not a JSON object")
            tasks.append(Task.from_dict(d))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{spec.path}:{lineno}: {exc}") from exc
    if spec.image_only_filter:
        tasks = [t for t in tasks if t.image_ref]
    if spec.sample_limit is not None and spec.sample_limit < len(tasks):
        picked = sorted(random.Random(spec.seed).sample(range(len(tasks)), spec.sample_limit))
        tasks = [tasks[i] for i in picked]
    if not tasks:
        raise EmptyAfterFilter(f"{spec.name}: no tasks left after filtering")
    return tasks


# --------------------------------------------------------------------------
# Tool-call analytics


@dataclass
class ToolHistogram:
    per_trajectory: list[tuple[str, dict[str, int]]]
    totals: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.totals.values())

    @property
    def n_trajectories(self) -> int:
        return len(self.per_trajectory)

    def mean(self, tool: str) -> float:
        return self.totals.get(tool, 0) / self.n_trajectories if self.per_trajectory else 0.0

    def distribution(self) -> dict[str, dict[int, int]]:
        """tool -> {calls in one trajectory: number of trajectories}."""
        out: dict[str, dict[int, int]] = {}
        for tool in self.totals:
            c = Counter(counts.get(tool, 0) for _, counts in self.per_trajectory)
            out[tool] = dict(sorted(c.items()))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "totals": self.totals,
            "total": self.total,
            "n_trajectories": self.n_trajectories,
            "mean_per_trajectory": {t: self.mean(t) for t in self.totals},
            "distribution": {t: {str(k): v for k, v in d.items()} for t, d in self.distribution().items()},
        }


def tool_call_histogram(trajectories: Iterable[Trajectory]) -> ToolHistogram:
    per: list[tuple[str, dict[str, int]]] = []
    totals: dict[str, int] = {name: 0 for name in TOOL_NAMES}
    for t in trajectories:
        counts = {name: 0 for name in TOOL_NAMES}
        for step in t.tool_steps():
            counts[step.action.name] = counts.get(step.action.name, 0) + 1
        for name, n in counts.items():
            totals[name] = totals.get(name, 0) + n
        per.append((t.ref, counts))
    return ToolHistogram(per, totals)


def write_histogram_csv(hist: ToolHistogram, path: str | Path) -> None:
    """Long format, one row per (tool, calls-per-trajectory) bucket."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tool", "calls_per_trajectory", "trajectories"])
        for tool, dist in hist.distribution().items():
            for calls, n in dist.items():
                w.writerow([tool, calls, n])


def write_per_trajectory_csv(hist: ToolHistogram, path: str | Path) -> None:
    tools = list(hist.totals)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory_ref", *tools, "total"])
        for ref, counts in hist.per_trajectory:
            row = [counts.get(t, 0) for t in tools]
            w.writerow([ref, *row, sum(row)])


# --------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalReport:
    benchmark: str
    n_evaluated: int
    n_correct: int
    terminations: dict[str, int]
    histogram: ToolHistogram
    records: list[dict[str, Any]] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_evaluated if self.n_evaluated else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "benchmark": self.benchmark,
            "n_evaluated": self.n_evaluated,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "terminations": self.terminations,
            "tool_calls": self.histogram.to_dict(),
        }

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        with open(out / "records.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        (out / "report.md").write_text(self.to_markdown(), encoding="utf-8")

    def to_markdown(self) -> str:
        lines = [
            f"# {self.benchmark}",
            "",
            "| metric | value |",
            "| --- | --- |",
            f"| evaluated | {self.n_evaluated} |",
            f"| correct | {self.n_correct} |",
            f"| accuracy | {self.accuracy:.4f} |",
        ]
        for term, n in self.terminations.items():
            lines.append(f"| termination: {term} | {n} |")
        for tool in self.histogram.totals:
            lines.append(f"| mean {tool} calls | {self.histogram.mean(tool):.3f} |")
        return "\n".join(lines) + "\n"


def judge_trajectory(task: Task, traj: Trajectory, judge_backend: Any) -> tuple[Judgment | None, str | None]:
    """Judgment for an answered trajectory; (None, error) if the judge is down."""
    if not traj.answered:
        return None, None
    try:
        return judge_answer(task.question_text, traj.final_answer or "", task.gold_answer, judge_backend), None
    except JudgeBackendFailure as exc:
        return None, str(exc)


def evaluate(
    tasks: Sequence[Task],
    policy: Any,
    tools: ToolGateway,
    config: RolloutConfig,
    judge_backend: Any,
    *,
    name: str = "benchmark",
    parallelism: int = 1,
    seed: int = 0,
    clock_factory: Callable[[], Callable[[], float]] | None = None,
) -> tuple[EvalReport, list[Trajectory]]:
    """One rollout per task, judged; the report lists tasks in input order."""
    by_id = {t.task_id: t for t in tasks}
    trajs: dict[str, Trajectory] = {}
    for group in run_group_batch(tasks, policy, tools, config, parallelism, seed=seed, group_size=1, clock_factory=clock_factory):
        trajs[group.task_id] = group.trajectories[0]
    ordered = [trajs[t.task_id] for t in tasks]
    terminations = {term.value: 0 for term in Termination}
    records = []
    n_correct = 0
    for traj in ordered:
        task = by_id[traj.task_id]
        terminations[traj.termination.value] += 1
        judgment, error = judge_trajectory(task, traj, judge_backend)
        correct = bool(judgment and judgment.correct)
        n_correct += correct
        records.append(
            {
                "task_id": task.task_id,
                "termination": traj.termination.value,
                "final_answer": traj.final_answer,
                "gold_answer": task.gold_answer,
                "correct": correct,
                "judgment": judgment.to_dict() if judgment else None,
                "judge_error": error,
                "tool_calls": len(traj.tool_steps()),
            }
        )
    report = EvalReport(name, len(ordered), n_correct, terminations, tool_call_histogram(ordered), records)
    return report, ordered


def compare_reports(reports: dict[str, dict[str, Any]]) -> str:
    """Markdown table comparing stages, from ``EvalReport.to_dict`` payloads."""
    tools = list(TOOL_NAMES)
    head = "| stage | evaluated | accuracy | answered | " + " | ".join(f"mean {t}" for t in tools) + " |"
    lines = [head, "|" + " --- |" * (4 + len(tools))]
    for stage, rep in reports.items():
        means = rep["tool_calls"]["mean_per_trajectory"]
        answered = rep["terminations"].get("answered", 0)
        cells = [stage, str(rep["n_evaluated"]), f"{rep['accuracy']:.4f}", str(answered)]
        cells += [f"{means.get(t, 0.0):.3f}" for t in tools]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
