"""Structured tool payloads."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any
from urllib.parse import urlparse

MAX_RESULTS = 5
FETCH_FAILED = "[fetch failed]"
SUMMARIZER_FAILED = "[summarizer failed]"


def is_valid_url(url: str) -> bool:
    try:
        parts = urlparse(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.netloc)


@dataclass(frozen=True)
class TextSearchResult:
    link: str
    title: str
    snippet: str

    def __post_init__(self) -> None:
        if not is_valid_url(self.link):
            raise ValueError(f"invalid result link {self.link!r}")


@dataclass(frozen=True)
class ImageSearchResult:
    image_url: str
    page_link: str
    page_title: str


@dataclass(frozen=True)
class VisitResult:
    url: str
    goal: str
    summary: str
    failure: str | None = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass(frozen=True)
class ToolResult:
    """What one dispatched tool call produced.

    Exactly one of ``items`` (searches), ``visit`` or ``error`` carries the
    payload; ``error`` is a failure marker surfaced to the agent as text.
    """

    tool: str
    items: tuple[TextSearchResult | ImageSearchResult, ...] = ()
    visit: VisitResult | None = None
    error: str | None = None
    fatal: bool = False
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool": self.tool,
            "items": [item.__dict__.copy() for item in self.items],
            "visit": self.visit.__dict__.copy() if self.visit else None,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ToolResult":
        tool = d["tool"]
        item_cls = ImageSearchResult if tool == "image_search" else TextSearchResult
        return cls(
            tool=tool,
            items=tuple(item_cls(**it) for it in d.get("items", ())),
            visit=VisitResult(**d["visit"]) if d.get("visit") else None,
            error=d.get("error"),
        )
