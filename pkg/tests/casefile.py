"""A hand-built 8-step trajectory: one image search, six text searches, then "Yes."."""

from __future__ import annotations

from mmagent.grammar import render_response
from mmagent.react import LogicalClock, RolloutConfig, run_trajectory
from mmagent.sim_agents import ScriptedPolicy
from mmagent.tools.gateway import ToolGateway
from mmagent.tools.results import ImageSearchResult, TextSearchResult, VisitResult
from mmagent.trajectory import FinalAnswer, Task, ToolInvocation

CASE_TASK = Task(
    task_id="case-1",
    question_text="Is the artwork in the image an example of installation art?",
    gold_answer="Yes",
    image_ref="https://example.org/images/artwork.jpg",
)

QUERIES = [
    "birdcage sculpture assemblage artist",
    "assemblage birdcage 1969 artwork",
    "birdcage artwork museum collection",
    "assemblage art installation definition",
    "birdcage assemblage installation art",
    "artist birdcage installation exhibition",
]


class CaseBackend:
    """Canned tool results; every search returns five hits."""

    name = "case"

    def text_search(self, query):
        slug = "-".join(query.split())
        return [TextSearchResult(f"https://example.org/{slug}/{i}", f"{query} {i}", f"snippet {i}") for i in range(1, 6)]

    def image_search(self, image_ref):
        return [
            ImageSearchResult(f"https://example.org/img/{i}.jpg", f"https://example.org/page/{i}", f"Page {i}")
            for i in range(1, 4)
        ]

    def visit(self, url, goal):
        return VisitResult(url, goal, "nothing here")


def case_responses() -> list[str]:
    out = [render_response("Let me look up the image first.", ToolInvocation("image_search", {}))]
    for q in QUERIES:
        out.append(render_response(f"Search for {q}.", ToolInvocation("text_search", {"query": q})))
    out.append(render_response("The sources agree it is an installation.", FinalAnswer("Yes.")))
    return out


def case_trajectory():
    return run_trajectory(
        CASE_TASK,
        ScriptedPolicy(case_responses()),
        ToolGateway(CaseBackend()),
        RolloutConfig(),
        clock=LogicalClock(),
    )
