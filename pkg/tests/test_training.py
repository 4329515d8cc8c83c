from __future__ import annotations

import math
import random

import numpy as np
import pytest

import grpo_oracle
from casefile import CASE_TASK, case_trajectory
from mmagent.grammar import ParsedResponse, parse_response, render_system_prompt
from mmagent.judge import Judgment
from mmagent.react import RolloutGroup
from mmagent.training import (
    GroupTooSmall,
    GrpoConfig,
    MissingJudgment,
    NonFiniteInput,
    ShapeMismatch,
    TokenRatioSeries,
    UnansweredTrajectory,
    UnjudgedGroup,
    build_rl_batch,
    build_sft_example,
    compute_advantages,
    grpo_objective,
    kl_estimate,
    rejection_filter,
    supervised_pairs,
)
from mmagent.trajectory import FinalAnswer, Termination, ToolInvocation, TrajectoryBuilder

YES = Judgment("x", "", True)
NO = Judgment("x", "", False)


def test_two_and_two():
    assert compute_advantages([1, 0, 1, 0]).tolist() == [1.0, -1.0, 1.0, -1.0]


def test_degenerate_group():
    assert compute_advantages([1] * 8).tolist() == [0.0] * 8
    assert compute_advantages([0] * 8).tolist() == [0.0] * 8


def test_seven_of_eight():
    got = compute_advantages([1] * 7 + [0])
    # mean 7/8, population std sqrt(7)/8
    assert got[:7] == pytest.approx([1 / math.sqrt(7)] * 7, abs=1e-12)
    assert got[7] == pytest.approx(-math.sqrt(7), abs=1e-12)


def test_advantage_errors():
    with pytest.raises(GroupTooSmall):
        compute_advantages([1])
    with pytest.raises(NonFiniteInput):
        compute_advantages([1, float("nan")])


def test_advantage_moments_random_groups():
    rng = random.Random(0)
    for _ in range(1000):
        r = [rng.random() for _ in range(rng.randint(2, 16))]
        a = compute_advantages(r)
        assert abs(a.mean()) < 1e-9
        assert abs(a.std() - 1) < 1e-9
        assert a.tolist() == pytest.approx(grpo_oracle.advantages(r), abs=1e-9)


def test_shift_scale_invariance():
    rng = random.Random(1)
    for _ in range(100):
        r = np.array([rng.random() for _ in range(8)])
        a, b = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        assert np.allclose(compute_advantages(r), compute_advantages(a * r + b), atol=1e-9)


def test_kl():
    # pi_ref / pi_theta = 2 gives 2 - ln 2 - 1
    assert kl_estimate([math.log(0.5)], [math.log(0.25)])[0] == pytest.approx(1 - math.log(2), abs=1e-12)
    assert 1 - math.log(2) == pytest.approx(0.30685, abs=1e-5)
    x = np.linspace(-3, 0, 50)
    assert np.all(kl_estimate(x, x) == 0)
    rng = np.random.default_rng(0)
    assert np.all(kl_estimate(rng.normal(size=1000), rng.normal(size=1000)) >= 0)
    with pytest.raises(ShapeMismatch):
        kl_estimate([0.0], [0.0, 1.0])


def one_token(rho, adv=1.0, eps=0.2):
    s = TokenRatioSeries.of([math.log(rho)], [0.0], [math.log(rho)])
    return grpo_objective([s], [adv], GrpoConfig(clip_epsilon=eps))


def test_clip_points():
    assert one_token(1.0) == 1.0
    assert one_token(1.5) == 1.2
    assert one_token(0.5, adv=-1.0) == -0.8


def random_group(rng, g):
    responses = []
    for _ in range(g):
        n = rng.randint(0, 6)
        theta = [rng.uniform(-3, -0.01) for _ in range(n)]
        old = [t + rng.uniform(-0.5, 0.5) for t in theta]
        ref = [t + rng.uniform(-0.5, 0.5) for t in theta]
        mask = [rng.random() < 0.8 for _ in range(n)]
        responses.append((theta, old, ref, mask))
    return responses


@pytest.mark.parametrize("aggregation", ["token-mean", "token-sum"])
def test_objective_matches_brute_force(aggregation):
    rng = random.Random(2)
    cfg = GrpoConfig(kl_coef=0.05, aggregation=aggregation)
    for _ in range(1000):
        g = rng.randint(2, 8)
        responses = random_group(rng, g)
        adv = [rng.uniform(-2, 2) for _ in range(g)]
        series = [TokenRatioSeries.of(*r) for r in responses]
        ours = grpo_objective(series, adv, cfg)
        want = grpo_oracle.group_objective(responses, adv, cfg.clip_epsilon, cfg.kl_coef, aggregation)
        assert math.isclose(ours, want, rel_tol=1e-9, abs_tol=1e-12), (ours, want)


def test_empty_mask_contributes_zero():
    s = TokenRatioSeries.of([-1.0], [-1.0], [-1.0], [False])
    assert grpo_objective([s, s], [1.0, -1.0]) == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        GrpoConfig(clip_epsilon=0)
    with pytest.raises(ValueError):
        GrpoConfig(aggregation="median")


# --------------------------------------------------------------------------
# rejection sampling and SFT


def finished(task_id, i, term, answer=None):
    b = TrajectoryBuilder(task_id, i)
    b.append_step("t", ToolInvocation("image_search", {}), "<tool_response>\nx\n</tool_response>")
    if term is Termination.ANSWERED:
        b.append_step("t", FinalAnswer(answer))
    return b.finalize(term, answer)


def test_rejection_filter():
    trajs = [
        finished("a", 0, Termination.ANSWERED, "x"),
        finished("a", 1, Termination.ANSWERED, "y"),
        finished("a", 2, Termination.STEP_LIMIT),
        finished("a", 3, Termination.ANSWERED, "z"),
    ]
    judgments = {"a#0": YES, "a#1": NO, "a#3": Judgment(None, "", False, 0, indeterminate=True)}
    kept, reasons = rejection_filter(trajs, judgments)
    want = {t.ref for t in trajs if t.answered and judgments[t.ref].correct}
    assert {t.ref for t in kept} == want == {"a#0"}
    assert set(reasons) == {"a#1", "a#2", "a#3"}
    with pytest.raises(MissingJudgment):
        rejection_filter(trajs, {})


def test_sft_case_export():
    ex = build_sft_example(case_trajectory(), CASE_TASK, render_system_prompt("2025-11-01"))
    roles = [m["role"] for m in ex["messages"]]
    assert roles[:2] == ["system", "user"]
    assert roles.count("assistant") == 8 and roles.count("tool") == 7
    assert ex["messages"][1]["image"] == CASE_TASK.image_ref
    for m in ex["messages"]:
        assert m["loss"] == (m["role"] == "assistant")
        if m["role"] == "assistant":
            assert isinstance(parse_response(m["content"]), ParsedResponse)
    pairs = supervised_pairs(ex)
    assert len(pairs) == 8
    assert pairs[0][0] == ex["messages"][:2]
    assert pairs[-1][1] == ex["messages"][-1]["content"]


def test_sft_needs_answer():
    with pytest.raises(UnansweredTrajectory):
        build_sft_example(finished("a", 0, Termination.TIMEOUT), CASE_TASK, "sys")


# --------------------------------------------------------------------------
# RL batches


def test_group_with_two_invalid():
    terms = [Termination.ANSWERED] * 5 + [Termination.FORMAT_VIOLATION, Termination.STEP_LIMIT, Termination.TIMEOUT]
    trajs = [finished("a", i, term, "x" if term is Termination.ANSWERED else None) for i, term in enumerate(terms)]
    judgments = {"a#0": YES, "a#1": YES, "a#2": NO, "a#3": YES, "a#4": NO}
    group = RolloutGroup("a", trajs)
    items = build_rl_batch([group], judgments)
    rewards = [1, 1, 0, 1, 0, 0, 0, 0]
    assert [i.reward for i in items] == rewards
    assert [i.advantage for i in items] == pytest.approx(grpo_oracle.advantages(rewards), abs=1e-12)
    out = [i for i in items if not i.in_loss]
    assert [i.exclusion for i in out] == ["step_limit", "timeout"]
    assert group.validity == [True] * 6 + [False] * 2


def test_unjudged_group():
    g = RolloutGroup("a", [finished("a", 0, Termination.ANSWERED, "x"), finished("a", 1, Termination.TIMEOUT)])
    with pytest.raises(UnjudgedGroup):
        build_rl_batch([g], {})


def test_batch_size():
    groups = []
    judgments = {}
    for k in range(32):
        tid = f"t{k}"
        trajs = [finished(tid, i, Termination.ANSWERED, "x") for i in range(8)]
        judgments.update({t.ref: YES if (i + k) % 3 else NO for i, t in enumerate(trajs)})
        groups.append(RolloutGroup(tid, trajs))
    assert len(build_rl_batch(groups, judgments)) == 256
