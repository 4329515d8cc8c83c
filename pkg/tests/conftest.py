from __future__ import annotations

import pytest

from mmagent.judge import ExactMatchJudge
from mmagent.sim_agents import SimImageJudge, SimTeacher, SimWeakModel
from mmagent.simweb import generate_world
from mmagent.synthesis import (
    FilterModels,
    SimKnowledgeBase,
    filter_task,
    level_counts,
    level_schedule,
    select_seeds,
    synthesize_dataset,
)

WORLD_SEED = 7


@pytest.fixture(scope="session")
def world():
    return generate_world(WORLD_SEED, 200)


@pytest.fixture(scope="session")
def kb(world):
    return SimKnowledgeBase(world)


@pytest.fixture(scope="session")
def teacher(world):
    return SimTeacher(world)


@pytest.fixture(scope="session")
def models(world):
    return FilterModels(
        SimWeakModel(world, sees_images=True),
        SimWeakModel(world, sees_images=False),
        SimImageJudge(world),
        ExactMatchJudge(),
    )


@pytest.fixture(scope="session")
def dataset(world, kb, teacher, models):
    """60 records at the 4:3:3 mix, each run through the filters."""
    seeds = select_seeds(kb, 10, 20, limit=10**6)
    levels = level_schedule(level_counts(60))
    result = synthesize_dataset(seeds, levels, teacher, kb, strict=False)
    for rec in result.records:
        filter_task(rec, models)
    return result


@pytest.fixture(scope="session")
def kept_tasks(dataset):
    return [r.final_task for r in dataset.records if r.kept]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
