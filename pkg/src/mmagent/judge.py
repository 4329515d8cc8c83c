"""LLM-as-judge verification of final answers."""

from __future__ import annotations

import logging
import re
import unicodedata
from dataclasses import dataclass

from . import prompts
from .backends import BackendFailure, LlmBackend

log = logging.getLogger(__name__)


class UnparseableJudgment(ValueError):
    pass


class JudgeBackendFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Judgment:
    extracted_final_answer: str | None  # None when the judge extracted nothing
    reasoning: str
    correct: bool
    confidence: int = 100
    indeterminate: bool = False  # judge output never parsed; counted as incorrect

    def to_dict(self) -> dict:
        return {
            "extracted_final_answer": self.extracted_final_answer,
            "reasoning": self.reasoning,
            "correct": self.correct,
            "confidence": self.confidence,
            "indeterminate": self.indeterminate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Judgment":
        return cls(
            d.get("extracted_final_answer"),
            d.get("reasoning", ""),
            bool(d["correct"]),
            int(d.get("confidence", 100)),
            bool(d.get("indeterminate", False)),
        )


def _label(name: str) -> re.Pattern[str]:
    # tolerate markdown emphasis around the label, e.g. "**correct**: yes"
    return re.compile(rf"^[ \t>*_#-]*{name}[*_]*[ \t]*:[ \t]*(.*)$", re.IGNORECASE | re.MULTILINE)


_ANSWER = _label("extracted_final_answer")
_REASONING = _label("reasoning")
_CORRECT = _label("correct")
_CONFIDENCE = _label("confidence")
_NEXT_LABEL = re.compile(r"^[ \t>*_#-]*(?:correct|confidence|extracted_final_answer)[*_]*[ \t]*:", re.I | re.M)


def _strip_marks(value: str) -> str:
    return value.strip().strip("*_`\"'").strip()


def parse_judgment(text: str) -> Judgment:
    """Extract the verdict fields; the last occurrence of each label wins."""
    corrects = _CORRECT.findall(text)
    if not corrects:
        raise UnparseableJudgment("no 'correct' field")
    word = re.match(r"[a-z]+", _strip_marks(corrects[-1]).lower())
    if word is None or word.group(0) not in ("yes", "no"):
        raise UnparseableJudgment(f"'correct' is neither yes nor no: {corrects[-1]!r}")

    answers = _ANSWER.findall(text)
    extracted: str | None = None
    if answers:
        value = _strip_marks(answers[-1])
        extracted = None if value.lower() in ("none", "") else value

    reasoning = ""
    m = None
    for m in _REASONING.finditer(text):
        pass
    if m is not None:
        nxt = _NEXT_LABEL.search(text, m.end())
        reasoning = text[m.start(1) : nxt.start() if nxt else len(text)].strip()

    confidence = 100
    confs = _CONFIDENCE.findall(text)
    if confs:
        num = re.search(r"\d+(?:\.\d+)?", confs[-1])
        if num:
            confidence = max(0, min(100, round(float(num.group(0)))))
    return Judgment(extracted, reasoning, word.group(0) == "yes", confidence)


def render_judge_prompt(question: str, response: str, correct_answer: str) -> str:
    return prompts.fill(
        prompts.load("judge"),
        {"{question}": question, "{response}": response, "{correct_answer}": correct_answer},
    )


def judge_answer(question: str, response_text: str, gold_answer: str, backend: LlmBackend, retries: int = 1) -> Judgment:
    if not gold_answer.strip():
        raise ValueError("gold_answer must be non-empty")
    prompt = render_judge_prompt(question, response_text, gold_answer)
    for attempt in range(retries + 1):
        try:
            raw = backend.complete(prompt)
        except BackendFailure as exc:
            raise JudgeBackendFailure(str(exc)) from exc
        try:
            return parse_judgment(raw)
        except UnparseableJudgment as exc:
            log.warning("unparseable judgment (attempt %d): %s", attempt + 1, exc)
    return Judgment(None, "judge output could not be parsed", correct=False, confidence=0, indeterminate=True)


def normalize_answer(text: str) -> str:
    text = unicodedata.normalize("NFC", text).strip().casefold()
    text = re.sub(r"\s+", " ", text)
    return text.rstrip(".!?;:,").strip()


class ExactMatchJudge:
    """Scripted judge: normalized exact match between response and gold.

    Much weaker than a real LLM judge (no paraphrase tolerance); it exists
    for deterministic offline runs.
    """

    name = "exact-match-judge"

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        fields = prompts.match("judge", prompt)
        if fields is None:
            raise BackendFailure("exact-match judge only understands the judge prompt")
        _question, response, correct = fields
        extracted = response.strip() or "None"
        ok = extracted != "None" and normalize_answer(response) == normalize_answer(correct)
        verdict = "matches" if ok else "does not match"
        return (
            f"extracted_final_answer: {extracted}\n\n"
            f"reasoning: After normalization the response {verdict} the correct answer.\n\n"
            f"correct: {'yes' if ok else 'no'}\n\n"
            "confidence: 100\n"
        )
