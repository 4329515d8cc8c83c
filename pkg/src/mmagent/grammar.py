"""Strict response grammar for agent turns, plus prompt/observation renderers.

Accepted responses, as EBNF (``ws`` is any Unicode whitespace)::

    response  = ws, think, ws, payload, ws ;
    think     = "<think>", text, "</think>" ;
    payload   = tool_call | answer ;
    tool_call = "<tool_call>", json_object, "</tool_call>" ;
    answer    = "<answer>", text, "</answer>" ;
    text      = ? any string containing none of the six tag literals ? ;

The tool-call body must be a JSON object with a string ``name`` and, if
present, an object ``arguments``. Tags are matched literally: ``< think>`` is
ordinary text, while any second ``<think>`` anywhere is a violation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

from . import prompts
from .tools.results import ImageSearchResult, TextSearchResult, ToolResult
from .trajectory import AgentAction, FinalAnswer, ToolInvocation

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
CALL_OPEN, CALL_CLOSE = "<tool_call>", "</tool_call>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, CALL_OPEN, CALL_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)
_TAG_RE = re.compile("|".join(re.escape(t) for t in TAGS))

RESPONSE_OPEN, RESPONSE_CLOSE = "<tool_response>", "</tool_response>"
NO_RESULTS = "No results found."


class ViolationKind(str, Enum):
    MISSING_THINK = "missing_think"
    MULTIPLE_THINK = "multiple_think"
    MISSING_PAYLOAD = "missing_payload"
    BOTH_PAYLOADS = "both_payloads"
    UNCLOSED_TAG = "unclosed_tag"
    BAD_TAG_ORDER = "bad_tag_order"
    MULTIPLE_TOOL_CALLS = "multiple_tool_calls"
    INVALID_TOOL_JSON = "invalid_tool_json"
    TRAILING_GARBAGE = "trailing_garbage"


@dataclass(frozen=True)
class ParsedResponse:
    thought: str
    payload: AgentAction


@dataclass(frozen=True)
class FormatViolation:
    kind: ViolationKind
    span: tuple[int, int] | None = None
    detail: str = ""


ParseResult = Union[ParsedResponse, FormatViolation]


def _byte_span(text: str, start: int, end: int) -> tuple[int, int]:
    b0 = len(text[:start].encode("utf-8"))
    return b0, b0 + len(text[start:end].encode("utf-8"))


def _tool_invocation(body: str) -> ToolInvocation | None:
    try:
        obj = json.loads(body)
    except (json.JSONDecodeError, RecursionError):
        return None
    if not isinstance(obj, dict) or not isinstance(obj.get("name"), str):
        return None
    args = obj.get("arguments", {})
    if not isinstance(args, dict):
        return None
    return ToolInvocation(obj["name"], args)


def parse_response(text: str) -> ParseResult:
    """Parse one model turn; never raises.

    Tags are scanned left to right and the first structural violation wins.
    The tool-call JSON body is validated only once the structure is sound.
    """
    state = "start"
    payload_kind = ""
    think_body = (0, 0)
    payload_body = (0, 0)
    pos = 0

    def violation(kind: ViolationKind, start: int, end: int, detail: str = "") -> FormatViolation:
        return FormatViolation(kind, _byte_span(text, start, end), detail)

    for m in _TAG_RE.finditer(text):
        gap = text[pos : m.start()]
        tag = m.group(0)
        if state == "start":
            if tag == THINK_CLOSE or (tag != THINK_OPEN and THINK_OPEN not in text):
                return violation(ViolationKind.MISSING_THINK, m.start(), m.end())
            if tag != THINK_OPEN:
                return violation(ViolationKind.BAD_TAG_ORDER, m.start(), m.end(), "payload before think")

        if state in ("start", "after_think", "after_payload") and gap.strip():
            off = pos + (len(gap) - len(gap.lstrip()))
            return violation(ViolationKind.TRAILING_GARBAGE, off, m.start(), "text outside blocks")

        if state == "start":
            state, think_start = "in_think", m.end()
        elif state == "in_think":
            if tag == THINK_CLOSE:
                state, think_body = "after_think", (think_start, m.start())
            elif tag == THINK_OPEN:
                return violation(ViolationKind.MULTIPLE_THINK, m.start(), m.end())
            else:
                return violation(ViolationKind.BAD_TAG_ORDER, m.start(), m.end(), "tag inside think")
        elif state == "after_think":
            if tag in (THINK_OPEN, THINK_CLOSE):
                return violation(ViolationKind.MULTIPLE_THINK, m.start(), m.end())
            if tag == CALL_OPEN:
                state, payload_kind, body_start = "in_payload", "tool_call", m.end()
            elif tag == ANSWER_OPEN:
                state, payload_kind, body_start = "in_payload", "answer", m.end()
            else:
                return violation(ViolationKind.BAD_TAG_ORDER, m.start(), m.end(), "closing tag without opening")
        elif state == "in_payload":
            closer = CALL_CLOSE if payload_kind == "tool_call" else ANSWER_CLOSE
            if tag == closer:
                state, payload_body = "after_payload", (body_start, m.start())
            elif tag in (THINK_OPEN, THINK_CLOSE):
                return violation(ViolationKind.MULTIPLE_THINK, m.start(), m.end())
            elif payload_kind == "tool_call" and tag == CALL_OPEN:
                return violation(ViolationKind.MULTIPLE_TOOL_CALLS, m.start(), m.end())
            elif payload_kind == "answer" and tag == ANSWER_OPEN:
                return violation(ViolationKind.TRAILING_GARBAGE, m.start(), m.end(), "nested answer")
            else:
                return violation(ViolationKind.BOTH_PAYLOADS, m.start(), m.end())
        else:  # after_payload
            if tag in (THINK_OPEN, THINK_CLOSE):
                return violation(ViolationKind.MULTIPLE_THINK, m.start(), m.end())
            if tag == CALL_OPEN:
                kind = ViolationKind.MULTIPLE_TOOL_CALLS if payload_kind == "tool_call" else ViolationKind.BOTH_PAYLOADS
                return violation(kind, m.start(), m.end())
            if tag == ANSWER_OPEN:
                kind = ViolationKind.TRAILING_GARBAGE if payload_kind == "answer" else ViolationKind.BOTH_PAYLOADS
                return violation(kind, m.start(), m.end())
            return violation(ViolationKind.TRAILING_GARBAGE, m.start(), m.end(), "stray closing tag")
        pos = m.end()

    tail = text[pos:]
    end = len(text)
    if state == "start":
        if tail.strip():
            return violation(ViolationKind.MISSING_THINK, 0, end, "no think block")
        return violation(ViolationKind.MISSING_THINK, 0, end)
    if state in ("in_think", "in_payload"):
        return violation(ViolationKind.UNCLOSED_TAG, pos, end)
    if tail.strip():
        return violation(ViolationKind.TRAILING_GARBAGE, pos, end)
    if state == "after_think":
        return violation(ViolationKind.MISSING_PAYLOAD, pos, end)

    thought = text[think_body[0] : think_body[1]].strip()
    body = text[payload_body[0] : payload_body[1]]
    if payload_kind == "answer":
        return ParsedResponse(thought, FinalAnswer(body.strip()))
    invocation = _tool_invocation(body)
    if invocation is None:
        return violation(ViolationKind.INVALID_TOOL_JSON, payload_body[0], payload_body[1])
    return ParsedResponse(thought, invocation)


def render_action(action: AgentAction) -> str:
    if isinstance(action, FinalAnswer):
        return f"{ANSWER_OPEN}{action.text}{ANSWER_CLOSE}"
    body = json.dumps({"name": action.name, "arguments": action.arguments}, ensure_ascii=False)
    return f"{CALL_OPEN}\n{body}\n{CALL_CLOSE}"


def render_response(thought: str, action: AgentAction) -> str:
    """Canonical assistant turn for a (thought, action) pair."""
    return f"{THINK_OPEN}\n{thought}\n{THINK_CLOSE}\n{render_action(action)}"


# --------------------------------------------------------------------------
# Prompt and observation rendering


class EmptyToolset(prompts.TemplateMissing):
    pass


def render_tool_specs(tool_specs: Iterable[dict]) -> str:
    return "\n".join(json.dumps(spec, ensure_ascii=False) for spec in tool_specs)


def render_system_prompt(current_date: str, tool_specs: list[dict] | None = None) -> str:
    specs = prompts.default_tool_specs() if tool_specs is None else list(tool_specs)
    if not specs:
        raise EmptyToolset("at least one tool spec is required")
    template = prompts.load("system")
    return prompts.fill(template, {"{TOOL_SPECS}": render_tool_specs(specs), "{CURRENT_DATE}": current_date})


def _escape(text: str) -> str:
    return text.replace(RESPONSE_CLOSE, "<\\/tool_response>")


def _one_line(text: str) -> str:
    return " ".join(text.split())


def render_tool_response(result: ToolResult) -> str:
    if result.error is not None:
        lines = [f"[Error] {_one_line(result.error)}"]
    elif result.visit is not None:
        v = result.visit
        tail = f"[Error] {_one_line(v.failure)}" if v.failed else f"[Summary] {v.summary.strip()}"
        lines = [f"[Page] {v.url}", f"[Goal] {_one_line(v.goal)}", tail]
    elif not result.items:
        lines = [NO_RESULTS]
    else:
        lines = []
        for i, item in enumerate(result.items, 1):
            if isinstance(item, TextSearchResult):
                lines.append(
                    f"{i}. [Link] {item.link} [Title] {_one_line(item.title)} [Snippet] {_one_line(item.snippet)}"
                )
            elif isinstance(item, ImageSearchResult):
                lines.append(
                    f"{i}. [Image Link] {item.image_url} [Page Link] {item.page_link} "
                    f"[Page Title] {_one_line(item.page_title)}"
                )
    body = _escape("\n".join(lines))
    return f"{RESPONSE_OPEN}\n{body}\n{RESPONSE_CLOSE}"
