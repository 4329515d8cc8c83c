from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casefile import case_trajectory
from mmagent.trajectory import (
    AlreadyFinalized,
    AnswerMissing,
    AnswerOnNonAnswered,
    FinalAnswer,
    MalformedLine,
    ObservationMismatch,
    SchemaVersionMismatch,
    Task,
    Termination,
    TokenAccounting,
    ToolInvocation,
    TrajectoryBuilder,
    deserialize,
    read_trajectories,
    serialize,
    write_jsonl,
)


def test_case_trajectory_shape():
    t = case_trajectory()
    assert t.termination is Termination.ANSWERED
    assert t.final_answer == "Yes."
    assert len(t.steps) == 8
    assert [s.action.name for s in t.tool_steps()] == ["image_search"] + ["text_search"] * 6


def test_append_after_answer_fails():
    b = TrajectoryBuilder("t")
    b.append_step("x", FinalAnswer("a"))
    with pytest.raises(AlreadyFinalized):
        b.append_step("y", FinalAnswer("b"))


def test_append_after_finalize_fails():
    b = TrajectoryBuilder("t")
    b.finalize(Termination.STEP_LIMIT)
    with pytest.raises(AlreadyFinalized):
        b.append_step("x", ToolInvocation("image_search", {}), "obs")
    with pytest.raises(AlreadyFinalized):
        b.finalize(Termination.STEP_LIMIT)


def test_observation_must_match_action():
    b = TrajectoryBuilder("t")
    with pytest.raises(ObservationMismatch):
        b.append_step("x", ToolInvocation("image_search", {}))
    with pytest.raises(ObservationMismatch):
        b.append_step("x", FinalAnswer("a"), "obs")


def test_finalize_answer_rules():
    with pytest.raises(AnswerMissing):
        TrajectoryBuilder("t").finalize(Termination.ANSWERED)
    with pytest.raises(AnswerOnNonAnswered):
        TrajectoryBuilder("t").finalize(Termination.TIMEOUT, "a")


def test_synthesized_task_needs_gold():
    with pytest.raises(ValueError):
        Task("t", "q?", "  ")


def test_unknown_termination_is_schema_mismatch():
    d = json.loads(serialize(case_trajectory()))
    d["termination"] = "gave_up"
    with pytest.raises(SchemaVersionMismatch):
        deserialize(json.dumps(d))


def test_wrong_schema_version():
    d = json.loads(serialize(case_trajectory()))
    d["schema_version"] = 99
    with pytest.raises(SchemaVersionMismatch):
        deserialize(json.dumps(d))


def test_garbage_line():
    with pytest.raises(MalformedLine):
        deserialize("{not json")
    with pytest.raises(MalformedLine):
        deserialize("[1, 2]")


def test_jsonl_file_round_trip(tmp_path):
    t = case_trajectory()
    path = tmp_path / "t.jsonl"
    write_jsonl(path, [t, t])
    assert read_trajectories(path) == [t, t]


text = st.text(max_size=40)
tool_call = st.builds(
    ToolInvocation,
    st.sampled_from(["text_search", "image_search", "visit"]),
    st.dictionaries(st.sampled_from(["query", "url", "goal"]), text, max_size=2),
)


@st.composite
def trajectories(draw):
    b = TrajectoryBuilder(draw(st.text(min_size=1, max_size=10)), draw(st.integers(0, 7)))
    for _ in range(draw(st.integers(0, 5))):
        b.append_step(draw(text), draw(tool_call), draw(text))
    term = draw(st.sampled_from(list(Termination)))
    answer = None
    if term is Termination.ANSWERED:
        answer = draw(text)
        b.append_step(draw(text), FinalAnswer(answer))
    acc = draw(st.none() | st.builds(TokenAccounting, st.integers(0, 10**6), st.integers(0, 10**6)))
    wall = draw(st.floats(0, 1e5, allow_nan=False))
    detail = draw(st.none() | text)
    return b.finalize(term, answer, wall_time=wall, token_accounting=acc, detail=detail)


@settings(max_examples=1000, deadline=None)
@given(trajectories())
def test_round_trip(t):
    line = serialize(t)
    assert "\n" not in line
    back = deserialize(line)
    assert back == t
    assert serialize(back) == line
