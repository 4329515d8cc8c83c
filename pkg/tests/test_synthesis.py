from __future__ import annotations

import pytest

from mmagent.backends import BackendFailure
from mmagent.simweb import IMAGE_PHRASE
from mmagent.synthesis import (
    ROUNDS,
    Criterion,
    EmptyContent,
    EntityNotInQuestion,
    FilterModels,
    InsufficientSeeds,
    LlmParseFailure,
    NoSeedsFound,
    SeedEntity,
    SynthesisRecord,
    TransformLeaksEntity,
    build_benchmark,
    filter_task,
    generate_initial_qa,
    inject_text_round,
    level_counts,
    level_schedule,
    select_seeds,
    synthesize_dataset,
    synthesize_task,
)
from mmagent.synthesis.filters import AUDIT_ORDER, SHORT_CIRCUIT_ORDER
from mmagent.synthesis.planted import plant_answer_leak, plant_text_answerable
from mmagent.trajectory import Difficulty


class Canned:
    """LLM stub returning the same reply to every prompt."""

    name = "canned"

    def __init__(self, reply):
        self.reply = reply
        self.calls = 0

    def complete(self, prompt, image_ref=None):
        self.calls += 1
        if isinstance(self.reply, Exception):
            raise self.reply
        return self.reply


class PageKb:
    def __init__(self, pages):
        self.pages = pages

    def find_seeds(self, max_sitelinks, min_statements, limit):
        return []

    def entity_page(self, label):
        return self.pages.get(label)

    def entity_image(self, label):
        return None


SEED = SeedEntity("E1", "Vopnal", 3, 25, "Vopnal is a place. The motto of Vopnal is Kerbo.")


def test_seeds_equal_gate_set(world, kb):
    seeds = select_seeds(kb, 10, 20, limit=10**6)
    gate = {e.entity_id for e in world.gate_passing(10, 20)}
    assert {s.entity_id for s in seeds} == gate
    assert all(s.sitelinks <= 10 and s.statements >= 20 for s in seeds)


def test_no_seeds(kb):
    with pytest.raises(NoSeedsFound):
        select_seeds(kb, 0, 10**9)


def test_initial_qa_retries_then_fails():
    llm = Canned("no json here")
    with pytest.raises(LlmParseFailure):
        generate_initial_qa(SEED, llm, retries=3)
    assert llm.calls == 3


def test_initial_qa_rejects_answer_in_question():
    llm = Canned('{"question": "Is Kerbo the motto of Vopnal?", "answer": "Kerbo"}')
    with pytest.raises(LlmParseFailure):
        generate_initial_qa(SEED, llm)


def test_initial_qa_parses_fenced_json():
    llm = Canned('```json\n{"question": "What is the motto of Vopnal?", "answer": "Kerbo"}\n```')
    qa = generate_initial_qa(SEED, llm)
    assert (qa.question, qa.answer) == ("What is the motto of Vopnal?", "Kerbo")


def test_empty_content():
    with pytest.raises(EmptyContent):
        generate_initial_qa(SeedEntity("E2", "X", 1, 30, "  "), Canned("{}"))


def test_entity_not_in_question():
    with pytest.raises(EntityNotInQuestion):
        inject_text_round("What is the motto of Vopnal?", Canned("Somewhere Else"), PageKb({}))


def test_transform_must_hide_entity():
    # entity selection, info and rewrite all get the same reply, which names the entity
    with pytest.raises((TransformLeaksEntity, LlmParseFailure)):
        inject_text_round("What is the motto of Vopnal?", Canned("Vopnal"), PageKb({"Vopnal": "page"}))


def test_backend_failure_reports_stage(kb, world):
    seed = select_seeds(kb, 10, 20)[0]
    with pytest.raises(Exception) as info:
        synthesize_task(seed, "easy", Canned(BackendFailure("down")), kb)
    assert info.value.stage == "initial_qa"


def test_round_counts(kb, teacher):
    seeds = select_seeds(kb, 10, 20, limit=10**6)
    for level, n in [(Difficulty.EASY, 1), (Difficulty.MEDIUM, 3), (Difficulty.HARD, 5), (Difficulty.BENCHMARK, 10)]:
        assert ROUNDS[level] == n
        result = synthesize_dataset(seeds, [level], teacher, kb)
        rec = result.records[-1]
        assert len(rec.rounds) == n
        assert rec.final_task.difficulty is level


def test_answer_preserved_and_entities_hidden(dataset):
    assert dataset.records
    for rec in dataset.records:
        task = rec.final_task
        assert task.gold_answer == rec.initial.answer
        assert rec.seed.label in rec.initial.question
        assert rec.seed.label not in task.question_text
        for r in rec.rounds:
            assert r.selected_entity in r.question_before
            assert r.selected_entity not in r.question_after
            assert r.parsed_info in r.question_after
        assert IMAGE_PHRASE in task.question_text
        assert rec.image_entity not in task.question_text
        assert task.image_ref is not None


def test_mix_and_schedule():
    counts = level_counts(60)
    assert counts == {Difficulty.EASY: 24, Difficulty.MEDIUM: 18, Difficulty.HARD: 18}
    assert sum(level_counts(7).values()) == 7
    sched = level_schedule(counts)
    assert len(sched) == 60
    first_ten = sched[:10]
    assert first_ten.count(Difficulty.EASY) == 4


def test_dataset_levels(dataset):
    levels = [r.level for r in dataset.records]
    assert levels.count(Difficulty.EASY) == 24
    assert levels.count(Difficulty.MEDIUM) == 18
    assert levels.count(Difficulty.HARD) == 18


def test_parallel_matches_sequential(kb, teacher):
    seeds = select_seeds(kb, 10, 20, limit=10**6)
    levels = level_schedule(level_counts(12))
    a = synthesize_dataset(seeds, levels, teacher, kb)
    b = synthesize_dataset(seeds, levels, teacher, kb, parallelism=4)
    assert [r.to_dict() for r in a.records] == [r.to_dict() for r in b.records]


def test_insufficient_seeds(kb, teacher):
    seeds = select_seeds(kb, 10, 20)[:2]
    with pytest.raises(InsufficientSeeds):
        synthesize_dataset(seeds, [Difficulty.EASY] * 5, teacher, kb)


def test_record_round_trip(dataset):
    rec = dataset.records[0]
    assert SynthesisRecord.from_dict(rec.to_dict()).to_dict() == rec.to_dict()


def test_planted_leaks_rejected(dataset, models):
    kept = [r for r in dataset.records if r.kept][:10]
    assert len(kept) == 10
    for rec in kept:
        planted = plant_answer_leak(rec)
        verdicts, ok = filter_task(planted, models)
        assert not ok
        assert {v.criterion for v in verdicts if v.rejected} >= {Criterion.ANSWER_LEAK}


def test_planted_text_answerable_rejected(world, models):
    planted = plant_text_answerable(world, 10)
    for rec in planted:
        verdicts, ok = filter_task(rec, models)
        assert not ok
        rejected = {v.criterion for v in verdicts if v.rejected}
        assert Criterion.TEXT_ONLY_ANSWERABLE in rejected


def test_short_circuit_stops_at_leak(dataset, models):
    rec = plant_answer_leak(next(r for r in dataset.records if r.kept))
    verdicts, ok = filter_task(rec, models, short_circuit=True)
    assert not ok and len(verdicts) == 1 and verdicts[0].criterion is Criterion.ANSWER_LEAK
    assert SHORT_CIRCUIT_ORDER[0] is Criterion.ANSWER_LEAK
    assert AUDIT_ORDER[-1] is Criterion.ANSWER_LEAK


def test_quarantine_on_indeterminate(dataset, models):
    rec = SynthesisRecord.from_dict(next(r for r in dataset.records if r.kept).to_dict())
    garbled = FilterModels(models.weak_lvlm, models.weak_llm, models.image_judge, Canned("no verdict at all"))
    _, ok = filter_task(rec, garbled)
    assert not ok and rec.quarantined and rec.kept is False


def test_benchmark_uses_unseen_seeds(kb, teacher, models, dataset):
    training = {r.seed.entity_id for r in dataset.records}
    bench = build_benchmark(kb, 5, training, teacher, models)
    assert len([r for r in bench.records if r.kept]) == 5
    assert not training & {r.seed.entity_id for r in bench.records}
    assert all(len(r.rounds) == 10 for r in bench.records)
