"""Rejection sampling, SFT export and the GRPO numerics.

Nothing here touches model weights: the outputs are arrays and JSONL files
for an external trainer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .grammar import render_response
from .judge import Judgment
from .react import RolloutGroup
from .trajectory import Task, Termination, Trajectory

log = logging.getLogger(__name__)

SFT_SCHEMA = "sft/1"
RL_SCHEMA = "rl_batch/1"

# terminations whose reward counts for the group statistics but not the loss
EXCLUDED_FROM_LOSS = frozenset(
    {Termination.STEP_LIMIT, Termination.TIMEOUT, Termination.CONTEXT_OVERFLOW, Termination.TOOL_ERROR}
)


class GroupTooSmall(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class MissingJudgment(KeyError):
    pass


class UnjudgedGroup(ValueError):
    pass


class UnansweredTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_epsilon: float = 0.2
    kl_coef: float = 0.001
    degenerate_std_epsilon: float = 1e-8
    aggregation: str = "token-mean"  # or "token-sum"

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be >= 0")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.aggregation not in ("token-mean", "token-sum"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GrpoConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# --------------------------------------------------------------------------
# Numerics


def assign_reward(judgment: Judgment | None, answered: bool = True) -> int:
    return int(answered and judgment is not None and judgment.correct)


def compute_advantages(rewards: Sequence[float], config: GrpoConfig | None = None) -> np.ndarray:
    """(r - mean) / population std; all zeros when the group is degenerate."""
    eps = (config or GrpoConfig()).degenerate_std_epsilon
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise NonFiniteInput("rewards must be finite")
    std = r.std()
    if std < eps:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_estimate(logp_ref: Any, logp_theta: Any) -> np.ndarray:
    """Per-token r - log r - 1 with r = pi_ref / pi_theta, computed in log space."""
    ref = np.asarray(logp_ref, dtype=np.float64)
    theta = np.asarray(logp_theta, dtype=np.float64)
    if ref.shape != theta.shape:
        raise ShapeMismatch(f"{ref.shape} vs {theta.shape}")
    if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(theta))):
        raise NonFiniteInput("log-probabilities must be finite")
    d = ref - theta
    # expm1(d) - d == exp(d) - d - 1 without cancellation near d = 0
    return np.maximum(np.expm1(d) - d, 0.0)


@dataclass(frozen=True)
class TokenRatioSeries:
    logp_theta: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.logp_theta)
        for name in ("logp_old", "logp_ref", "mask"):
            if len(getattr(self, name)) != n:
                raise ShapeMismatch(f"{name} has length {len(getattr(self, name))}, expected {n}")

    @classmethod
    def of(cls, logp_theta: Any, logp_old: Any, logp_ref: Any, mask: Any = None) -> "TokenRatioSeries":
        theta = np.asarray(logp_theta, dtype=np.float64)
        m = np.ones_like(theta, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        return cls(theta, np.asarray(logp_old, dtype=np.float64), np.asarray(logp_ref, dtype=np.float64), m)


def token_objective(series: TokenRatioSeries, advantage: float, config: GrpoConfig) -> np.ndarray:
    """Per-token clipped surrogate minus the KL penalty (unmasked)."""
    ratio = np.exp(series.logp_theta - series.logp_old)
    eps = config.clip_epsilon
    surrogate = np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)
    if config.kl_coef == 0:
        return surrogate
    return surrogate - config.kl_coef * kl_estimate(series.logp_ref, series.logp_theta)


def grpo_objective(series: Sequence[TokenRatioSeries], advantages: Sequence[float], config: GrpoConfig | None = None) -> float:
    """Group objective: mean over responses of the token-reduced surrogate.

    A response with no unmasked tokens contributes 0.
    """
    config = config or GrpoConfig()
    adv = np.asarray(advantages, dtype=np.float64)
    if adv.ndim != 1 or len(series) != adv.size or adv.size == 0:
        raise ShapeMismatch(f"{len(series)} responses vs {adv.size} advantages")
    total = 0.0
    for s, a in zip(series, adv):
        per_token = token_objective(s, float(a), config)[s.mask]
        if per_token.size == 0:
            continue
        total += per_token.sum() if config.aggregation == "token-sum" else per_token.mean()
    return float(total / adv.size)


# --------------------------------------------------------------------------
# Rejection sampling and SFT export


def rejection_filter(trajectories: Iterable[Trajectory], judgments: Mapping[str, Judgment]) -> tuple[list[Trajectory], dict[str, str]]:
    """Keep answered trajectories judged correct; ``judgments`` is keyed by ``Trajectory.ref``.

    Returns the kept list and a rejection reason per dropped trajectory.
    """
    kept: list[Trajectory] = []
    reasons: dict[str, str] = {}
    for t in trajectories:
        if not t.answered:
            reasons[t.ref] = f"not answered ({t.termination.value})"
            continue
        j = judgments.get(t.ref)
        if j is None:
            raise MissingJudgment(t.ref)
        if j.indeterminate:
            reasons[t.ref] = "judgment indeterminate"
        elif not j.correct:
            reasons[t.ref] = "judged incorrect"
        else:
            kept.append(t)
    for ref, why in reasons.items():
        log.debug("rejected %s: %s", ref, why)
    return kept, reasons


def build_sft_example(trajectory: Trajectory, task: Task, system_prompt: str) -> dict[str, Any]:
    """Chat transcript of one trajectory; ``loss`` marks assistant turns."""
    if not trajectory.answered:
        raise UnansweredTrajectory(trajectory.ref)
    user: dict[str, Any] = {"role": "user", "content": task.question_text, "loss": False}
    if task.image_ref:
        user["image"] = task.image_ref
    messages: list[dict[str, Any]] = [{"role": "system", "content": system_prompt, "loss": False}, user]
    for step in trajectory.steps:
        messages.append({"role": "assistant", "content": render_response(step.thought, step.action), "loss": True})
        if step.observation is not None:
            messages.append({"role": "tool", "content": step.observation, "loss": False})
    return {"schema": SFT_SCHEMA, "task_id": task.task_id, "trajectory_ref": trajectory.ref, "messages": messages}


def supervised_pairs(example: dict[str, Any]) -> list[tuple[list[dict[str, Any]], str]]:
    """(context, target) for every assistant turn: the query plus all prior turns, and the output."""
    msgs = example["messages"]
    return [(msgs[:i], m["content"]) for i, m in enumerate(msgs) if m["loss"]]


def export_sft(trajectories: Iterable[Trajectory], tasks: Mapping[str, Task], system_prompt: str) -> list[dict[str, Any]]:
    return [build_sft_example(t, tasks[t.task_id], system_prompt) for t in trajectories]


# --------------------------------------------------------------------------
# RL batches


@dataclass(frozen=True)
class RlBatchItem:
    task_id: str
    trajectory_ref: str
    reward: float
    advantage: float
    in_loss: bool
    exclusion: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": RL_SCHEMA,
            "task_id": self.task_id,
            "trajectory_ref": self.trajectory_ref,
            "reward": self.reward,
            "advantage": self.advantage,
            "in_loss": self.in_loss,
            "exclusion": self.exclusion,
        }


def exclusion_reason(t: Trajectory) -> str | None:
    return t.termination.value if t.termination in EXCLUDED_FROM_LOSS else None


def score_group(group: RolloutGroup, judgments: Mapping[str, Judgment], config: GrpoConfig | None = None) -> RolloutGroup:
    """Fill rewards, advantages and validity flags in place."""
    rewards = []
    for t in group.trajectories:
        if t.answered and t.ref not in judgments:
            raise UnjudgedGroup(f"{group.task_id}: {t.ref} has no judgment")
        rewards.append(float(assign_reward(judgments.get(t.ref), t.answered)))
    group.rewards = rewards
    group.advantages = [float(a) for a in compute_advantages(rewards, config)]
    group.validity = [exclusion_reason(t) is None for t in group.trajectories]
    return group


def build_rl_batch(groups: Iterable[RolloutGroup], judgments: Mapping[str, Judgment], config: GrpoConfig | None = None) -> list[RlBatchItem]:
    items = []
    for g in groups:
        score_group(g, judgments, config)
        for t, r, a in zip(g.trajectories, g.rewards, g.advantages):
            why = exclusion_reason(t)
            items.append(RlBatchItem(g.task_id, t.ref, r, a, why is None, why))
    return items

