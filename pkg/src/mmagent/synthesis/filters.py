"""The four rejection criteria applied to synthesized tasks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .. import prompts
from ..backends import BackendFailure, LlmBackend
from ..judge import JudgeBackendFailure, judge_answer
from .pipeline import SynthesisRecord, contains

log = logging.getLogger(__name__)


class Criterion(str, Enum):
    LVLM_DIRECT_ANSWERABLE = "lvlm_direct_answerable"
    TEXT_ONLY_ANSWERABLE = "text_only_answerable"
    IMAGE_TOO_SIMPLE = "image_too_simple"
    ANSWER_LEAK = "answer_leak"


AUDIT_ORDER = (
    Criterion.LVLM_DIRECT_ANSWERABLE,
    Criterion.TEXT_ONLY_ANSWERABLE,
    Criterion.IMAGE_TOO_SIMPLE,
    Criterion.ANSWER_LEAK,
)
# cheapest first when stopping at the first rejection
SHORT_CIRCUIT_ORDER = (Criterion.ANSWER_LEAK, *AUDIT_ORDER[:3])


@dataclass(frozen=True)
class FilterVerdict:
    criterion: Criterion
    rejected: bool
    evidence: str
    indeterminate: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "criterion": self.criterion.value,
            "rejected": self.rejected,
            "evidence": self.evidence,
            "indeterminate": self.indeterminate,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FilterVerdict":
        return cls(Criterion(d["criterion"]), bool(d["rejected"]), d.get("evidence", ""), bool(d.get("indeterminate", False)))


@dataclass
class FilterModels:
    weak_lvlm: LlmBackend
    weak_llm: LlmBackend
    image_judge: LlmBackend
    judge: LlmBackend


def answer_leaks(question: str, answer: str) -> bool:
    return contains(question, answer)


def _direct(criterion: Criterion, model: LlmBackend, judge: LlmBackend, question: str, gold: str, image_ref: str | None) -> FilterVerdict:
    prompt = prompts.fill(prompts.load("direct_answer"), {"[QUESTION]": question})
    try:
        reply = model.complete(prompt, image_ref).strip()
        j = judge_answer(question, reply, gold, judge)
    except (BackendFailure, JudgeBackendFailure) as exc:
        return FilterVerdict(criterion, False, f"backend failure: {exc}", indeterminate=True)
    if j.indeterminate:
        return FilterVerdict(criterion, False, f"judge unparseable on reply {reply!r}", indeterminate=True)
    return FilterVerdict(criterion, j.correct, f"{model.name} replied {reply!r}")


def _image_simple(model: LlmBackend, image_ref: str | None) -> FilterVerdict:
    c = Criterion.IMAGE_TOO_SIMPLE
    if image_ref is None:
        return FilterVerdict(c, False, "task has no image")
    try:
        reply = model.complete(prompts.load("image_evaluation"), image_ref).strip()
    except BackendFailure as exc:
        return FilterVerdict(c, False, f"backend failure: {exc}", indeterminate=True)
    word = reply.lower().strip(" .\"'*")
    if word.startswith("yes"):
        return FilterVerdict(c, True, f"image judged simple: {reply!r}")
    if word.startswith("no"):
        return FilterVerdict(c, False, f"image judged complex: {reply!r}")
    return FilterVerdict(c, False, f"unclear image verdict {reply!r}", indeterminate=True)


def evaluate_criterion(criterion: Criterion, record: SynthesisRecord, models: FilterModels) -> FilterVerdict:
    task = record.final_task
    if criterion is Criterion.ANSWER_LEAK:
        leak = answer_leaks(task.question_text, task.gold_answer)
        return FilterVerdict(criterion, leak, "answer found in question" if leak else "answer absent from question")
    if criterion is Criterion.LVLM_DIRECT_ANSWERABLE:
        return _direct(criterion, models.weak_lvlm, models.judge, task.question_text, task.gold_answer, task.image_ref)
    if criterion is Criterion.TEXT_ONLY_ANSWERABLE:
        return _direct(criterion, models.weak_llm, models.judge, task.question_text, task.gold_answer, None)
    return _image_simple(models.image_judge, task.image_ref)


def filter_task(record: SynthesisRecord, models: FilterModels, *, short_circuit: bool = False) -> tuple[list[FilterVerdict], bool]:
    """Run the criteria, store verdicts on ``record`` and return (verdicts, kept).

    A task with any indeterminate verdict and no rejection is quarantined:
    neither kept nor rejected.
    """
    verdicts = []
    for criterion in SHORT_CIRCUIT_ORDER if short_circuit else AUDIT_ORDER:
        v = evaluate_criterion(criterion, record, models)
        verdicts.append(v)
        if short_circuit and v.rejected:
            break
    rejected = any(v.rejected for v in verdicts)
    record.quarantined = not rejected and any(v.indeterminate for v in verdicts)
    record.kept = not rejected and not record.quarantined
    record.filter_verdicts = verdicts
    return verdicts, record.kept
