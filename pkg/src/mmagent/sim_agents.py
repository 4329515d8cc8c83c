"""Scripted model backends for the simulated web.

These stand in for the teacher LLM, the weak filter models, the image judge
and the agent policy. Each one recognizes the shipped prompt it is handed by
matching it against the template, extracts the substituted fields, and
answers from the world's ground truth. They are deliberately simple and
deterministic; none of them is a claim about how a real model behaves.
"""

from __future__ import annotations

import json
from typing import Any, Callable, Sequence

from . import prompts
from .backends import BackendFailure, SamplingParams
from .grammar import render_response
from .simweb import (
    IMAGE_PHRASE,
    SimEntity,
    SimWorld,
    descriptor_from_ref,
    oracle_solve,
    parse_fact_line,
    stable_index,
    tokenize,
)
from .trajectory import FinalAnswer, Task, ToolInvocation

IDK = "I don't know."


def identify(prompt: str, names: Sequence[str]) -> tuple[str, tuple[str, ...]]:
    for name in names:
        fields = prompts.match(name, prompt)
        if fields is not None:
            return name, fields
    raise BackendFailure(f"prompt matches none of {', '.join(names)}")


def question_chain(question: str) -> tuple[list[str], str] | None:
    """Split ``What is the p0 of the p1 of ... of X?`` into ([p0, p1, ...], X)."""
    q = question.strip()
    if not (q.startswith("What is ") and q.endswith("?")):
        return None
    parts = q[len("What is ") : -1].split(" of ")
    if len(parts) < 2 or not all(p.startswith("the ") for p in parts[:-1]):
        return None
    return [p[len("the ") :] for p in parts[:-1]], parts[-1]


class SimTeacher:
    """Teacher LLM for synthesis prompts and the visit summarizer."""

    name = "sim-teacher"

    def __init__(self, world: SimWorld) -> None:
        self.world = world

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        name, fields = identify(
            prompt,
            (
                "initial_qa",
                "image_entity_selection",
                "entity_selection",
                "info_parsing",
                "text_injection",
                "image_injection",
                "summary",
            ),
        )
        return getattr(self, f"_{name}")(*fields)

    def _initial_qa(self, page: str, entity: str) -> str:
        for line in page.splitlines():
            fact = parse_fact_line(line)
            if fact and fact[1] == entity and fact[2].lower() not in self.world.by_label:
                return json.dumps({"question": f"What is the {fact[0]} of {entity}?", "answer": fact[2]}, indent=4)
        return "The page has no attribute worth asking about."

    def _named(self, text: str) -> str:
        named = self.world.labels_in(text)
        if not named:
            return "none"
        return max(named, key=lambda e: text.lower().rfind(e.label.lower())).label

    def _entity_selection(self, text: str) -> str:
        return self._named(text)

    def _image_entity_selection(self, text: str) -> str:
        return self._named(text)

    def _info_parsing(self, text: str, entity: str) -> str:
        prefix = f"{entity} is "
        options = [line[len(prefix) : -1] for line in text.splitlines() if line.startswith(prefix) and line.endswith(".")]
        if not options:
            return ""
        return options[stable_index(len(options), entity)]

    def _text_injection(self, question: str, entity: str, info: str) -> str:
        return question.replace(entity, info)

    def _image_injection(self, question: str, entity: str) -> str:
        return question.replace(entity, IMAGE_PHRASE)

    def _summary(self, page: str, goal: str) -> str:
        goal_tokens = set(tokenize(goal))
        hits = [line for line in page.splitlines() if (f := parse_fact_line(line)) and set(tokenize(f[0])) <= goal_tokens]
        return " ".join(hits) or "The page does not mention information relevant to the goal."


class SimWeakModel:
    """Weak LLM/LVLM used by the filters.

    It knows the facts of popular entities only (more sitelinks than
    ``popularity``), and when ``sees_images`` it recognizes images of
    entities it knows. It answers the direct-answer prompt by walking the
    question's chain of descriptions from its anchor.
    """

    def __init__(self, world: SimWorld, *, sees_images: bool, popularity: int = 10) -> None:
        self.world = world
        self.sees_images = sees_images
        self.popularity = popularity
        self.name = "sim-weak-lvlm" if sees_images else "sim-weak-llm"

    def knows(self, entity: SimEntity) -> bool:
        return entity.sitelinks > self.popularity

    def _anchor(self, anchor: str, image_ref: str | None) -> SimEntity | None:
        if anchor == IMAGE_PHRASE:
            if not (self.sees_images and image_ref):
                return None
            owner = self.world.image_index.get(descriptor_from_ref(image_ref) or "")
            entity = self.world.by_id.get(owner or "")
            return entity if entity and self.knows(entity) else None
        return self.world.by_label.get(anchor.lower())

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        _, (question,) = identify(prompt, ("direct_answer",))
        parsed = question_chain(question)
        if parsed is None:
            return IDK
        preds, anchor = parsed
        entity = self._anchor(anchor, image_ref)
        for i, pred in enumerate(reversed(preds)):
            if entity is None or not self.knows(entity):
                return IDK
            s = self.world.fact(entity.entity_id, pred)
            if s is None:
                return IDK
            if i == len(preds) - 1:
                return self.world.value_text(s)
            entity = self.world.by_id.get(s.value) if s.is_entity else None
        return IDK


class SimImageJudge:
    """Answers the image-evaluation prompt from the world's simplicity flag."""

    name = "sim-image-judge"

    def __init__(self, world: SimWorld) -> None:
        self.world = world

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        identify(prompt, ("image_evaluation",))
        owner = self.world.image_index.get(descriptor_from_ref(image_ref or "") or "")
        if owner is None:
            raise BackendFailure(f"no sim image behind {image_ref!r}")
        return "yes" if self.world.by_id[owner].image_simple else "no"


# --------------------------------------------------------------------------
# Policies


def _turn(messages: list[dict[str, Any]]) -> int:
    return sum(1 for m in messages if m["role"] == "assistant")


def _final_fact(messages: list[dict[str, Any]]) -> str | None:
    for msg in reversed(messages):
        if msg["role"] != "tool":
            continue
        for line in msg["content"].splitlines():
            if line.startswith("[Summary] "):
                fact = parse_fact_line(line[len("[Summary] ") :])
                if fact:
                    return fact[2]
        return None
    return None


def _thought_for(call: ToolInvocation) -> str:
    if call.name == "image_search":
        return "The question hinges on the image, so I should find out what it shows."
    if call.name == "visit":
        return f"Next I read the page to {call.arguments['goal'][0].lower()}{call.arguments['goal'][1:]}"
    return f"Let me search for {call.arguments.get('query', '')}."


class OraclePolicy:
    """Replays :func:`oracle_solve` plans, then answers from the last page."""

    name = "sim-oracle"

    def __init__(self, world: SimWorld, tasks: Sequence[Task]) -> None:
        self.world = world
        self.plans = {(t.question_text, t.image_ref): oracle_solve(world, t)[1] for t in tasks}

    def plan_for(self, messages: list[dict[str, Any]]) -> list[ToolInvocation]:
        first = messages[0]
        try:
            return self.plans[(first["content"], first.get("image"))]
        except KeyError:
            raise BackendFailure("oracle policy has no plan for this question") from None

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        plan = self.plan_for(messages)
        n = _turn(messages)
        if n < len(plan):
            return render_response(_thought_for(plan[n]), plan[n])
        answer = _final_fact(messages) or IDK
        return render_response("The last page states the value asked for.", FinalAnswer(answer))


class NoisyOraclePolicy(OraclePolicy):
    """Oracle that, per sampled trajectory, may answer wrongly, stall until the
    step cap, or emit a malformed response. The mode is drawn from the
    sampling seed so a group of G samples mixes outcomes deterministically."""

    name = "sim-noisy-oracle"

    def __init__(self, world: SimWorld, tasks: Sequence[Task], wrong: float = 0.25, stall: float = 0.1, malformed: float = 0.05) -> None:
        super().__init__(world, tasks)
        self.cuts = (wrong, wrong + stall, wrong + stall + malformed)

    def _mode(self, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        u = stable_index(10_000, str(params.seed), messages[0]["content"]) / 10_000
        for mode, cut in zip(("wrong", "stall", "malformed"), self.cuts):
            if u < cut:
                return mode
        return "oracle"

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        mode = self._mode(messages, params)
        n = _turn(messages)
        if mode == "stall":
            return render_response("I am not sure yet.", ToolInvocation("text_search", {"query": f"{messages[0]['content']} {n}"}))
        if mode == "malformed" and n == 1:
            return "<think>I will just say it</think> the answer is probably obvious"
        if mode == "wrong" and n >= len(self.plan_for(messages)):
            return render_response("I will go with my best guess.", FinalAnswer("unknown"))
        return super().generate(system_prompt, messages, params)


class ConstantAnswerPolicy:
    name = "constant-answer"

    def __init__(self, answer: str = "unknown") -> None:
        self.answer = answer

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        return render_response("I will answer right away.", FinalAnswer(self.answer))


class NeverAnswerPolicy:
    """Keeps searching forever; only the step cap stops it."""

    name = "never-answer"

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        query = f"{messages[0]['content']} clue {_turn(messages)}"
        return render_response("I need more evidence.", ToolInvocation("text_search", {"query": query}))


class ScriptedPolicy:
    """Returns ``responses[k]`` on the k-th turn (the last one repeats)."""

    name = "scripted"

    def __init__(self, responses: Sequence[str] | Callable[[int], str]) -> None:
        self.responses = responses

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        n = _turn(messages)
        if callable(self.responses):
            return self.responses(n)
        return self.responses[min(n, len(self.responses) - 1)]
