"""Shipped prompt templates.

Templates are plain text files with literal placeholders (``{question}``,
``[PAGE CONTENT]``, ...). :func:`fill` substitutes them in a single pass so
substituted content is never re-expanded.
"""

from __future__ import annotations

import hashlib
import json
import re
from functools import lru_cache
from importlib import resources

TEMPLATE_NAMES = (
    "system",
    "judge",
    "summary",
    "initial_qa",
    "entity_selection",
    "info_parsing",
    "text_injection",
    "image_entity_selection",
    "image_injection",
    "direct_answer",
    "image_evaluation",
)


# placeholders per template, in the order they appear
PLACEHOLDERS = {
    "system": ("{TOOL_SPECS}", "{CURRENT_DATE}"),
    "judge": ("{question}", "{response}", "{correct_answer}"),
    "summary": ("[WEB PAGE CONTENT]", "[USER GOAL]"),
    "initial_qa": ("[PAGE CONTENT]", "[ENTITY]"),
    "entity_selection": ("[TEXT]",),
    "info_parsing": ("[TEXT]", "[ENTITY]"),
    "text_injection": ("[QUESTION]", "[ENTITY]", "[INFORMATION]"),
    "image_entity_selection": ("[TEXT]",),
    "image_injection": ("[QUESTION]", "[ENTITY]"),
    "direct_answer": ("[QUESTION]",),
    "image_evaluation": (),
}


class TemplateMissing(LookupError):
    pass


@lru_cache(maxsize=None)
def load(name: str) -> str:
    try:
        return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateMissing(name) from exc


def default_tool_specs() -> list[dict]:
    text = resources.files(__package__).joinpath("tools.json").read_text(encoding="utf-8")
    return json.loads(text)


def fill(template: str, values: dict[str, str]) -> str:
    """Replace each literal placeholder key in ``values`` with its value."""
    if not values:
        return template
    pattern = re.compile("|".join(re.escape(k) for k in sorted(values, key=len, reverse=True)))
    return pattern.sub(lambda m: values[m.group(0)], template)


@lru_cache(maxsize=None)
def _template_regex(name: str) -> re.Pattern[str]:
    pattern = re.escape(load(name))
    for ph in PLACEHOLDERS[name]:
        pattern = pattern.replace(re.escape(ph), "(.*?)", 1)
    return re.compile(f"^{pattern}$", re.DOTALL)


def match(name: str, text: str) -> tuple[str, ...] | None:
    """Placeholder values if ``text`` is template ``name`` filled in, else None."""
    m = _template_regex(name).match(text)
    return m.groups() if m else None


def template_hashes() -> dict[str, str]:
    out = {name: hashlib.sha256(load(name).encode("utf-8")).hexdigest() for name in TEMPLATE_NAMES}
    tools = resources.files(__package__).joinpath("tools.json").read_bytes()
    out["tools"] = hashlib.sha256(tools).hexdigest()
    return out
