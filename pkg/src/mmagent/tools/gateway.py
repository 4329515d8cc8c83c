"""Tool registry and dispatch for ``text_search``, ``image_search`` and ``visit``.

:class:`ToolGateway` enforces the tool contracts (argument validation, the
five-result cap, one image per page) on top of any :class:`ToolBackend`:
the simulated web, a live provider stack, or a recorded session.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Protocol

from .. import prompts
from .results import (
    FETCH_FAILED,
    MAX_RESULTS,
    ImageSearchResult,
    TextSearchResult,
    ToolResult,
    VisitResult,
    is_valid_url,
)

log = logging.getLogger(__name__)


class ToolError(Exception):
    """Base class for tool failures."""


class EmptyQuery(ToolError):
    pass


class NoTaskImage(ToolError):
    pass


class ProviderError(ToolError):
    pass


class RateLimited(ProviderError):
    """All credentials are over budget; not recoverable within the rollout."""


class FetchFailed(ToolError):
    pass


class SummarizerFailed(ToolError):
    pass


class UnknownTool(ToolError):
    pass


class BadArguments(ToolError):
    pass


class ReplayMiss(ProviderError):
    """A recorded session has no entry for the requested call."""


class ToolBackend(Protocol):
    name: str

    def text_search(self, query: str) -> list[TextSearchResult]: ...

    def image_search(self, image_ref: str) -> list[ImageSearchResult]: ...

    def visit(self, url: str, goal: str) -> VisitResult: ...


@dataclass(frozen=True)
class TaskContext:
    task_id: str
    image_ref: str | None = None


# Required string arguments per tool; no other keys are accepted.
ARGUMENT_SCHEMA: dict[str, tuple[str, ...]] = {
    "text_search": ("query",),
    "image_search": (),
    "visit": ("url", "goal"),
}


class ToolGateway:
    def __init__(self, backend: ToolBackend, tool_specs: list[dict] | None = None) -> None:
        self.backend = backend
        self.tool_specs = prompts.default_tool_specs() if tool_specs is None else tool_specs
        self.registry = {spec["function"]["name"] for spec in self.tool_specs}

    # -- the three tools -------------------------------------------------

    def text_search(self, query: str) -> list[TextSearchResult]:
        if not query or not query.strip():
            raise EmptyQuery("text_search needs a non-empty query")
        return list(self.backend.text_search(query))[:MAX_RESULTS]

    def image_search(self, task: TaskContext) -> list[ImageSearchResult]:
        if task.image_ref is None:
            raise NoTaskImage(f"task {task.task_id} has no image")
        seen: set[str] = set()
        out: list[ImageSearchResult] = []
        for item in self.backend.image_search(task.image_ref):
            if item.page_link in seen:
                continue
            seen.add(item.page_link)
            out.append(item)
            if len(out) == MAX_RESULTS:
                break
        return out

    def visit(self, url: str, goal: str) -> VisitResult:
        if not goal or not goal.strip():
            raise BadArguments("visit needs a non-empty goal")
        if not is_valid_url(url):
            return VisitResult(url, goal, "", failure=f"{FETCH_FAILED} unparseable URL")
        return self.backend.visit(url, goal)

    # -- routing -----------------------------------------------------------

    def validate(self, name: str, arguments: dict[str, Any]) -> None:
        if name not in self.registry or name not in ARGUMENT_SCHEMA:
            raise UnknownTool(name)
        required = ARGUMENT_SCHEMA[name]
        missing = [k for k in required if k not in arguments]
        if missing:
            raise BadArguments(f"{name}: missing required argument(s) {', '.join(missing)}")
        extra = sorted(set(arguments) - set(required))
        if extra:
            raise BadArguments(f"{name}: unexpected argument(s) {', '.join(extra)}")
        for k in required:
            if not isinstance(arguments[k], str):
                raise BadArguments(f"{name}: argument {k!r} must be a string")

    def dispatch(self, name: str, arguments: dict[str, Any], task: TaskContext) -> ToolResult:
        """Validate and route one invocation. Raises on contract violations."""
        self.validate(name, arguments)
        if name == "text_search":
            return ToolResult(name, items=tuple(self.text_search(arguments["query"])))
        if name == "image_search":
            return ToolResult(name, items=tuple(self.image_search(task)))
        return ToolResult(name, visit=self.visit(arguments["url"], arguments["goal"]))

    def call(self, name: str, arguments: dict[str, Any], task: TaskContext) -> ToolResult:
        """Like :meth:`dispatch`, but turns failures into error markers.

        Only an exhausted key pool or a replay miss is flagged ``fatal``;
        every other failure is shown to the agent and the rollout goes on.
        """
        try:
            return self.dispatch(name, arguments, task)
        except RateLimited as exc:
            return ToolResult(name, error=f"rate limited: {exc}", fatal=True)
        except ReplayMiss as exc:
            return ToolResult(name, error=f"replay miss: {exc}", fatal=True)
        except ToolError as exc:
            log.debug("tool %s failed: %s", name, exc)
            return ToolResult(name, error=f"{type(exc).__name__}: {exc}")
