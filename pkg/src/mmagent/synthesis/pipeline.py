"""Iterative injection: seed -> initial QA -> N text injections -> image injection.

Every model sub-step is retried up to ``retries`` times with its invariant
re-checked after each attempt. Substring tests are case-insensitive on
NFC-normalized, whitespace-collapsed text.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Sequence

from .. import prompts
from ..backends import BackendFailure, LlmBackend
from ..trajectory import Difficulty, Provenance, Task
from .kb import KnowledgeBase, SeedEntity

log = logging.getLogger(__name__)

ROUNDS = {Difficulty.EASY: 1, Difficulty.MEDIUM: 3, Difficulty.HARD: 5, Difficulty.BENCHMARK: 10}
DEFAULT_MIX = {Difficulty.EASY: 4, Difficulty.MEDIUM: 3, Difficulty.HARD: 3}
IMAGE_MARKER = "shown in the image"
RETRIES = 3


class SynthesisError(RuntimeError):
    stage = "synthesis"


class NoSeedsFound(SynthesisError):
    pass


class InsufficientSeeds(SynthesisError):
    pass


class EmptyContent(SynthesisError):
    pass


class LlmParseFailure(SynthesisError):
    pass


class EntityNotInQuestion(SynthesisError):
    pass


class EntityPageMissing(SynthesisError):
    pass


class TransformLeaksEntity(SynthesisError):
    pass


class NoImageAvailable(SynthesisError):
    pass


class CriticalEntityUnresolvable(SynthesisError):
    pass


def norm(text: str) -> str:
    return re.sub(r"\s+", " ", unicodedata.normalize("NFC", text)).strip().casefold()


def contains(haystack: str, needle: str) -> bool:
    n = norm(needle)
    return bool(n) and n in norm(haystack)


def _clean(text: str) -> str:
    return text.strip().strip("\"'`").strip()


# --------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class QaPair:
    question: str
    answer: str

    def to_dict(self) -> dict[str, str]:
        return {"question": self.question, "answer": self.answer}


@dataclass(frozen=True)
class InjectionRound:
    round_index: int
    selected_entity: str
    parsed_info: str
    question_before: str
    question_after: str

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ImageInjection:
    question: str
    image_ref: str
    image_entity: str


@dataclass
class SynthesisRecord:
    record_id: str
    level: Difficulty
    seed: SeedEntity
    initial: QaPair
    rounds: list[InjectionRound]
    image_entity: str | None
    final_task: Task
    filter_verdicts: list[Any] = field(default_factory=list)
    kept: bool | None = None
    quarantined: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "level": self.level.value,
            "seed": self.seed.to_dict(),
            "initial": self.initial.to_dict(),
            "rounds": [r.to_dict() for r in self.rounds],
            "image_entity": self.image_entity,
            "final_task": self.final_task.to_dict(),
            "filter_verdicts": [v.to_dict() for v in self.filter_verdicts],
            "kept": self.kept,
            "quarantined": self.quarantined,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SynthesisRecord":
        from .filters import FilterVerdict

        return cls(
            record_id=d["record_id"],
            level=Difficulty(d["level"]),
            seed=SeedEntity.from_dict(d["seed"]),
            initial=QaPair(**d["initial"]),
            rounds=[InjectionRound(**r) for r in d["rounds"]],
            image_entity=d.get("image_entity"),
            final_task=Task.from_dict(d["final_task"]),
            filter_verdicts=[FilterVerdict.from_dict(v) for v in d.get("filter_verdicts", [])],
            kept=d.get("kept"),
            quarantined=bool(d.get("quarantined", False)),
        )


# --------------------------------------------------------------------------
# Steps


def select_seeds(kb: KnowledgeBase, max_sitelinks: int = 10, min_statements: int = 20, limit: int = 1000) -> list[SeedEntity]:
    if max_sitelinks < 0 or min_statements < 1 or limit < 1:
        raise ValueError("seed thresholds must be positive")
    seeds = [s for s in kb.find_seeds(max_sitelinks, min_statements, limit) if s.sitelinks <= max_sitelinks and s.statements >= min_statements]
    if not seeds:
        raise NoSeedsFound(f"no entity with sitelinks <= {max_sitelinks} and statements >= {min_statements}")
    return seeds


def _ask(llm: LlmBackend, template: str, values: dict[str, str], image_ref: str | None = None) -> str:
    return llm.complete(prompts.fill(prompts.load(template), values), image_ref)


_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


def parse_qa_json(text: str) -> QaPair | None:
    m = _JSON_OBJECT.search(text)
    if not m:
        return None
    try:
        d = json.loads(m.group(0))
    except json.JSONDecodeError:
        return None
    if not isinstance(d, dict):
        return None
    q, a = d.get("question"), d.get("answer")
    if not isinstance(q, str) or not isinstance(a, (str, int, float)) or not q.strip() or not str(a).strip():
        return None
    return QaPair(q.strip(), str(a).strip())


def generate_initial_qa(seed: SeedEntity, llm: LlmBackend, retries: int = RETRIES) -> QaPair:
    if not seed.page_content.strip():
        raise EmptyContent(f"seed {seed.label} has an empty page")
    for attempt in range(retries):
        qa = parse_qa_json(_ask(llm, "initial_qa", {"[PAGE CONTENT]": seed.page_content, "[ENTITY]": seed.label}))
        if qa is None:
            log.debug("initial QA attempt %d for %s did not parse", attempt + 1, seed.label)
        elif contains(qa.question, qa.answer):
            log.debug("initial QA attempt %d for %s leaks its answer", attempt + 1, seed.label)
        else:
            return qa
    raise LlmParseFailure(f"no usable QA pair for {seed.label} after {retries} attempts")


def inject_text_round(
    question: str,
    llm: LlmBackend,
    kb: KnowledgeBase,
    round_index: int = 1,
    *,
    answer: str | None = None,
    retries: int = RETRIES,
) -> InjectionRound:
    if not question.strip():
        raise ValueError("question must be non-empty")

    entity = ""
    for _ in range(retries):
        entity = _clean(_ask(llm, "entity_selection", {"[TEXT]": question}))
        if entity and contains(question, entity):
            break
    else:
        raise EntityNotInQuestion(f"selected {entity!r} is not in the question")

    page = kb.entity_page(entity)
    if not page:
        raise EntityPageMissing(entity)

    info = ""
    for _ in range(retries):
        info = _ask(llm, "info_parsing", {"[TEXT]": page, "[ENTITY]": entity}).strip()
        if info and not contains(info, entity):
            break
    else:
        raise LlmParseFailure(f"no usable information about {entity!r}")

    after = ""
    for _ in range(retries):
        after = _ask(llm, "text_injection", {"[QUESTION]": question, "[ENTITY]": entity, "[INFORMATION]": info}).strip()
        if after and not contains(after, entity) and contains(after, info) and not (answer and contains(after, answer)):
            return InjectionRound(round_index, entity, info, question, after)
    raise TransformLeaksEntity(f"transform kept {entity!r}, dropped the information, or leaked the answer: {after!r}")


def inject_image(
    question: str,
    llm: LlmBackend,
    kb: KnowledgeBase,
    *,
    marker: str = IMAGE_MARKER,
    retries: int = RETRIES,
) -> ImageInjection:
    if not question.strip():
        raise ValueError("question must be non-empty")
    entity = ""
    for _ in range(retries):
        entity = _clean(_ask(llm, "image_entity_selection", {"[TEXT]": question}))
        if entity and contains(question, entity):
            break
    else:
        raise CriticalEntityUnresolvable(f"selected {entity!r} is not in the question")

    image_ref = kb.entity_image(entity)
    if image_ref is None:
        raise NoImageAvailable(entity)

    after = ""
    for _ in range(retries):
        after = _ask(llm, "image_injection", {"[QUESTION]": question, "[ENTITY]": entity}).strip()
        if after and not contains(after, entity) and contains(after, marker):
            return ImageInjection(after, image_ref, entity)
    raise TransformLeaksEntity(f"image transform kept {entity!r} or lacks {marker!r}: {after!r}")


def synthesize_task(
    seed: SeedEntity,
    level: Difficulty | str,
    llm: LlmBackend,
    kb: KnowledgeBase,
    *,
    retries: int = RETRIES,
    record_id: str | None = None,
) -> SynthesisRecord:
    level = Difficulty(level)
    record_id = record_id or f"{level.value}-{seed.entity_id}"
    stage = "initial_qa"
    try:
        initial = generate_initial_qa(seed, llm, retries)
        question = initial.question
        rounds = []
        for k in range(1, ROUNDS[level] + 1):
            stage = f"text_injection[{k}]"
            r = inject_text_round(question, llm, kb, k, answer=initial.answer, retries=retries)
            rounds.append(r)
            question = r.question_after
        stage = "image_injection"
        img = inject_image(question, llm, kb, retries=retries)
    except (SynthesisError, BackendFailure) as exc:
        if isinstance(exc, BackendFailure):
            exc = SynthesisError(f"backend failure: {exc}")
        exc.stage = stage
        raise exc
    provenance = Provenance(
        record_id=record_id,
        seed_entity=seed.label,
        level=level.value,
        hidden_entities=tuple(r.selected_entity for r in rounds),
        image_entity=img.image_entity,
    )
    task = Task(record_id, img.question, initial.answer, level, img.image_ref, provenance=provenance)
    return SynthesisRecord(record_id, level, seed, initial, rounds, img.image_entity, task)


# --------------------------------------------------------------------------
# Datasets


def level_counts(n: int, mix: dict[Difficulty, int] | None = None) -> dict[Difficulty, int]:
    """Largest-remainder apportionment of ``n`` tasks to the mix ratio."""
    mix = mix or DEFAULT_MIX
    total = sum(mix.values())
    if n < 0 or total <= 0:
        raise ValueError("need n >= 0 and a positive mix")
    exact = {lvl: n * w / total for lvl, w in mix.items()}
    counts = {lvl: int(x) for lvl, x in exact.items()}
    order = sorted(mix, key=lambda lvl: (-(exact[lvl] - counts[lvl]), list(mix).index(lvl)))
    for lvl in order[: n - sum(counts.values())]:
        counts[lvl] += 1
    return counts


def level_schedule(counts: dict[Difficulty, int]) -> list[Difficulty]:
    """Interleave levels so partial runs keep roughly the target mix."""
    out: list[Difficulty] = []
    left = dict(counts)
    total = sum(counts.values())
    for i in range(total):
        # pick the level furthest behind its share
        lvl = max(left, key=lambda l: (left[l] / counts[l] if counts[l] else -1, -list(counts).index(l)))
        out.append(lvl)
        left[lvl] -= 1
    return out


@dataclass
class DatasetResult:
    records: list[SynthesisRecord]
    failures: list[tuple[str, str, str]]  # (seed entity_id, stage, message)

    @property
    def tasks(self) -> list[Task]:
        return [r.final_task for r in self.records if r.kept is not False and not r.quarantined]


def _map_ordered(fn: Callable[[Any], Any], items: Sequence[Any], parallelism: int) -> Iterable[Any]:
    """Apply ``fn`` in chunks of ``parallelism``, yielding results in input order."""
    if parallelism <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(parallelism) as pool:
        for start in range(0, len(items), parallelism):
            yield from pool.map(fn, items[start : start + parallelism])


def synthesize_dataset(
    seeds: Sequence[SeedEntity],
    levels: Sequence[Difficulty],
    llm: LlmBackend,
    kb: KnowledgeBase,
    *,
    accept: Callable[[SynthesisRecord], bool] | None = None,
    exclude_seed_ids: Iterable[str] = (),
    parallelism: int = 1,
    retries: int = RETRIES,
    strict: bool = True,
) -> DatasetResult:
    """Fill ``levels`` slot by slot, one seed per slot, skipping seeds that fail.

    ``accept`` (e.g. the filters) decides whether a finished record fills its
    slot; rejected records are still returned. Results do not depend on
    ``parallelism``: seeds are consumed in order and each attempt is a pure
    function of (seed, level).
    """
    excluded = set(exclude_seed_ids)
    pool = [s for s in seeds if s.entity_id not in excluded]
    records: list[SynthesisRecord] = []
    failures: list[tuple[str, str, str]] = []
    slot = 0
    cursor = 0
    while slot < len(levels) and cursor < len(pool):
        width = max(1, parallelism)
        batch = pool[cursor : cursor + width]
        # assume every attempt fills a slot; surplus work is discarded below
        jobs = [(s, levels[min(slot + i, len(levels) - 1)]) for i, s in enumerate(batch)]

        def attempt(job: tuple[SeedEntity, Difficulty]) -> SynthesisRecord | SynthesisError:
            seed, lvl = job
            try:
                return synthesize_task(seed, lvl, llm, kb, retries=retries)
            except SynthesisError as exc:
                return exc

        results = list(_map_ordered(attempt, jobs, parallelism))
        for (seed, lvl), res in zip(jobs, results):
            if slot >= len(levels):
                break
            cursor += 1
            if lvl is not levels[slot]:
                # the slot this job guessed was not the one it landed on; redo it
                try:
                    res = synthesize_task(seed, levels[slot], llm, kb, retries=retries)
                except SynthesisError as exc:
                    res = exc
            if isinstance(res, SynthesisError):
                failures.append((seed.entity_id, res.stage, str(res)))
                continue
            ok = accept(res) if accept else True
            records.append(res)
            if ok:
                slot += 1
    if slot < len(levels) and strict:
        raise InsufficientSeeds(f"filled {slot} of {len(levels)} slots from {len(pool)} seeds")
    return DatasetResult(records, failures)


def with_question(record: SynthesisRecord, question: str, suffix: str) -> SynthesisRecord:
    """Copy of ``record`` whose final task asks ``question`` instead."""
    task = replace(record.final_task, task_id=f"{record.final_task.task_id}-{suffix}", question_text=question)
    return replace(record, record_id=task.task_id, final_task=task, filter_verdicts=[], kept=None, quarantined=False)
