"""Deliberately bad tasks used to check that the filters bite."""

from __future__ import annotations

from ..simweb import SimWorld
from ..trajectory import Difficulty, Provenance, Task
from .kb import SeedEntity
from .pipeline import InjectionRound, QaPair, SynthesisRecord, with_question


def plant_answer_leak(record: SynthesisRecord) -> SynthesisRecord:
    """Same task, with the gold answer spelled out inside the question."""
    q = record.final_task.question_text.rstrip("?").rstrip()
    return with_question(record, f"{q}, which some sources give as {record.final_task.gold_answer}?", "leak")


def plant_text_answerable(world: SimWorld, n: int, popularity: int = 10) -> list[SynthesisRecord]:
    """One-round tasks built from popular entities and left named in the text.

    The question ``What is the <attr> of the <rel> of Q?`` names Q; Q and
    the hidden entity P are both popular, so a model that knows popular
    entities can answer from the text alone. Q's image is attached anyway.
    """
    popular = [e for e in world.entities if e.sitelinks > popularity]
    out: list[SynthesisRecord] = []
    for q in popular:
        if len(out) == n:
            break
        if q.image_ref is None:
            continue
        for s in q.statements:
            p = world.by_id.get(s.value) if s.is_entity else None
            if p is None or p.sitelinks <= popularity:
                continue
            attr = next((a for a in p.statements if not a.is_entity), None)
            if attr is None:
                continue
            rid = f"planted-text-{len(out):02d}"
            initial = QaPair(f"What is the {attr.predicate} of {p.label}?", attr.value)
            info = f"the {s.predicate} of {q.label}"
            question = initial.question.replace(p.label, info)
            seed = SeedEntity(p.entity_id, p.label, p.sitelinks, len(p.statements), world.page_text(p))
            prov = Provenance(rid, p.label, Difficulty.EASY.value, (p.label,), None)
            task = Task(rid, question, attr.value, Difficulty.EASY, q.image_ref, provenance=prov)
            rnd = InjectionRound(1, p.label, info, initial.question, question)
            out.append(SynthesisRecord(rid, Difficulty.EASY, seed, initial, [rnd], None, task))
            break
    if len(out) < n:
        raise ValueError(f"world only supports {len(out)} text-answerable plants")
    return out
