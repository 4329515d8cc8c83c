from __future__ import annotations

import csv
import json

import pytest

from casefile import case_trajectory
from mmagent.evaluation import (
    BenchmarkSpec,
    EmptyAfterFilter,
    SchemaError,
    compare_reports,
    evaluate,
    load_benchmark,
    tool_call_histogram,
    write_histogram_csv,
    write_per_trajectory_csv,
)
from mmagent.judge import ExactMatchJudge
from mmagent.react import LogicalClock, RolloutConfig
from mmagent.sim_agents import ConstantAnswerPolicy, OraclePolicy
from mmagent.simweb import SimWebBackend
from mmagent.tools.gateway import ToolGateway
from mmagent.trajectory import Task, write_jsonl


def bench_file(tmp_path, n=10):
    tasks = [Task(f"q{i}", f"question {i}?", "a", image_ref=f"https://e.org/{i}.jpg" if i % 2 else None) for i in range(n)]
    path = tmp_path / "bench.jsonl"
    write_jsonl(path, tasks)
    return path


def test_image_only_filter(tmp_path):
    tasks = load_benchmark(BenchmarkSpec("b", str(bench_file(tmp_path)), image_only_filter=True))
    assert [t.task_id for t in tasks] == ["q1", "q3", "q5", "q7", "q9"]


def test_seeded_limit(tmp_path):
    path = str(bench_file(tmp_path))
    a = load_benchmark(BenchmarkSpec("b", path, sample_limit=4, seed=5))
    b = load_benchmark(BenchmarkSpec("b", path, sample_limit=4, seed=5))
    assert [t.task_id for t in a] == [t.task_id for t in b]
    assert len(a) == 4
    ids = [int(t.task_id[1:]) for t in a]
    assert ids == sorted(ids)


def test_schema_error_has_line(tmp_path):
    path = bench_file(tmp_path)
    lines = path.read_text().splitlines()
    lines[2] = json.dumps({"task_id": "x"})
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match=":3:"):
        load_benchmark(BenchmarkSpec("b", str(path)))


def test_empty_after_filter(tmp_path):
    path = tmp_path / "b.jsonl"
    write_jsonl(path, [Task("q", "text only?", "a")])
    with pytest.raises(EmptyAfterFilter):
        load_benchmark(BenchmarkSpec("b", str(path), image_only_filter=True))


def test_accuracy_oracle_and_constant(world, kept_tasks):
    tasks = kept_tasks[:10]
    tools = ToolGateway(SimWebBackend(world))
    good, _ = evaluate(tasks, OraclePolicy(world, tasks), tools, RolloutConfig(), ExactMatchJudge(), clock_factory=LogicalClock)
    assert good.accuracy == 1.0
    bad, _ = evaluate(tasks, ConstantAnswerPolicy("unknown"), tools, RolloutConfig(), ExactMatchJudge(), clock_factory=LogicalClock)
    assert bad.accuracy == 0.0
    assert [r["task_id"] for r in good.records] == [t.task_id for t in tasks]


def test_case_histogram():
    hist = tool_call_histogram([case_trajectory()])
    assert hist.totals == {"text_search": 6, "image_search": 1, "visit": 0}
    assert hist.total == 7


def test_accounting_identity(world, kept_tasks):
    tasks = kept_tasks[:10]
    _, trajs = evaluate(tasks, OraclePolicy(world, tasks), ToolGateway(SimWebBackend(world)), RolloutConfig(), ExactMatchJudge(), clock_factory=LogicalClock)
    trajs = trajs + [case_trajectory()]
    hist = tool_call_histogram(trajs)
    assert hist.total == sum(len(t.tool_steps()) for t in trajs)
    assert sum(sum(c.values()) for _, c in hist.per_trajectory) == hist.total
    for tool, dist in hist.distribution().items():
        assert sum(dist.values()) == len(trajs)
        assert sum(k * v for k, v in dist.items()) == hist.totals[tool]


def test_csv_outputs(tmp_path):
    hist = tool_call_histogram([case_trajectory(), case_trajectory()])
    write_histogram_csv(hist, tmp_path / "h.csv")
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert {"tool": "text_search", "calls_per_trajectory": "6", "trajectories": "2"} in rows
    write_per_trajectory_csv(hist, tmp_path / "p.csv")
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert rows[0]["total"] == "7"


def test_report_files_and_comparison(tmp_path, world, kept_tasks):
    tasks = kept_tasks[:3]
    report, _ = evaluate(tasks, OraclePolicy(world, tasks), ToolGateway(SimWebBackend(world)), RolloutConfig(), ExactMatchJudge(), clock_factory=LogicalClock)
    report.write(tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"report.json", "records.jsonl", "report.md"}
    table = compare_reports({"sft": report.to_dict(), "rl": report.to_dict()})
    assert table.count("\n") == 4 and "| sft | 3 | 1.0000 |" in table
