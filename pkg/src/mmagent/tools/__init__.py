from .gateway import (
    BadArguments,
    EmptyQuery,
    FetchFailed,
    NoTaskImage,
    ProviderError,
    RateLimited,
    ReplayMiss,
    SummarizerFailed,
    TaskContext,
    ToolBackend,
    ToolError,
    ToolGateway,
    UnknownTool,
)
from .keys import KeyPool
from .results import ImageSearchResult, TextSearchResult, ToolResult, VisitResult

__all__ = [
    "BadArguments",
    "EmptyQuery",
    "FetchFailed",
    "ImageSearchResult",
    "KeyPool",
    "NoTaskImage",
    "ProviderError",
    "RateLimited",
    "ReplayMiss",
    "SummarizerFailed",
    "TaskContext",
    "TextSearchResult",
    "ToolBackend",
    "ToolError",
    "ToolGateway",
    "ToolResult",
    "UnknownTool",
    "VisitResult",
]
