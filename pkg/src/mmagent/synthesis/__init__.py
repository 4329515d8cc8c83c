"""Task synthesis by iterative information injection."""

from __future__ import annotations

from typing import Iterable

from ..trajectory import Difficulty
from .filters import Criterion, FilterModels, FilterVerdict, answer_leaks, filter_task
from .kb import KbUnavailable, KnowledgeBase, OfflinePageIndex, SeedEntity, SimKnowledgeBase, WikidataKnowledgeBase
from .pipeline import (
    DEFAULT_MIX,
    ROUNDS,
    CriticalEntityUnresolvable,
    DatasetResult,
    EmptyContent,
    EntityNotInQuestion,
    EntityPageMissing,
    ImageInjection,
    InjectionRound,
    InsufficientSeeds,
    LlmParseFailure,
    NoImageAvailable,
    NoSeedsFound,
    QaPair,
    SynthesisError,
    SynthesisRecord,
    TransformLeaksEntity,
    generate_initial_qa,
    inject_image,
    inject_text_round,
    level_counts,
    level_schedule,
    select_seeds,
    synthesize_dataset,
    synthesize_task,
)


def build_benchmark(
    kb: KnowledgeBase,
    n_tasks: int,
    training_seed_ids: Iterable[str],
    llm,
    models: FilterModels,
    *,
    max_sitelinks: int = 10,
    min_statements: int = 20,
    parallelism: int = 1,
) -> DatasetResult:
    """``n_tasks`` kept benchmark-level tasks from seeds unseen in training."""
    seeds = select_seeds(kb, max_sitelinks, min_statements, limit=10**6)
    return synthesize_dataset(
        seeds,
        [Difficulty.BENCHMARK] * n_tasks,
        llm,
        kb,
        accept=lambda rec: filter_task(rec, models)[1],
        exclude_seed_ids=training_seed_ids,
        parallelism=parallelism,
    )


__all__ = [
    "DEFAULT_MIX",
    "ROUNDS",
    "Criterion",
    "CriticalEntityUnresolvable",
    "DatasetResult",
    "EmptyContent",
    "EntityNotInQuestion",
    "EntityPageMissing",
    "FilterModels",
    "FilterVerdict",
    "ImageInjection",
    "InjectionRound",
    "InsufficientSeeds",
    "KbUnavailable",
    "KnowledgeBase",
    "LlmParseFailure",
    "NoImageAvailable",
    "NoSeedsFound",
    "OfflinePageIndex",
    "QaPair",
    "SeedEntity",
    "SimKnowledgeBase",
    "SynthesisError",
    "SynthesisRecord",
    "TransformLeaksEntity",
    "WikidataKnowledgeBase",
    "answer_leaks",
    "build_benchmark",
    "filter_task",
    "generate_initial_qa",
    "inject_image",
    "inject_text_round",
    "level_counts",
    "level_schedule",
    "select_seeds",
    "synthesize_dataset",
    "synthesize_task",
]
