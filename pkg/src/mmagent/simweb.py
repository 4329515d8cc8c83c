"""Deterministic synthetic web for offline, verifiable runs.

A :class:`SimWorld` is an entity graph. Every entity has one page listing its
own statements as fact lines (``The <predicate> of <label> is <object>.``);
no fact is printed on more than one page, so a question that hides an entity
behind a fact forces exactly one extra page visit. Images are opaque
descriptors owned by a single entity.

All names are pseudo-words built so that no name is a substring of another
name or of the fixed question vocabulary; substring checks in the synthesis
pipeline are therefore exact on sim data.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any
from urllib.parse import unquote, urlparse

from .tools.results import FETCH_FAILED, ImageSearchResult, TextSearchResult, VisitResult
from .trajectory import Task, ToolInvocation

SITE = "https://simweb.test"
IMAGE_SCHEME = "sim://image/"
IMAGE_PHRASE = "the entity shown in the image"

RELATIONS = (
    "architect", "founder", "patron", "mentor", "rival", "successor", "predecessor", "publisher",
    "sponsor", "owner", "designer", "curator", "translator", "illustrator", "benefactor", "landlord",
    "namesake", "twin town", "supervisor", "manufacturer", "distributor", "host venue", "editor",
    "composer", "librettist", "commissioner", "dedicatee", "sculptor", "engraver", "printer",
    "conductor", "producer", "narrator", "cartographer", "surveyor", "archivist",
)  # fmt: skip
ATTRIBUTES = (
    "motto", "nickname", "code name", "call sign", "watchword", "emblem", "anthem", "signature dish",
    "house style", "hallmark", "cipher", "insignia", "banner", "pseudonym", "battle cry", "tagline",
)  # fmt: skip

_RESERVED = " ".join(RELATIONS + ATTRIBUTES) + " what is the of entity shown in image find page about"
_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_FACT_RE = re.compile(r"^The (?P<pred>.+?) of (?P<subj>.+?) is (?P<obj>.+)\.$")
_TOKEN_RE = re.compile(r"[a-z0-9]+")


class SimError(Exception):
    pass


class BadDistribution(SimError, ValueError):
    pass


class ProvenanceMissing(SimError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def page_url(label: str) -> str:
    return f"{SITE}/wiki/{label.replace(' ', '_')}"


def label_from_url(url: str) -> str | None:
    parts = urlparse(url)
    if f"{parts.scheme}://{parts.netloc}" != SITE or not parts.path.startswith("/wiki/"):
        return None
    return unquote(parts.path[len("/wiki/") :]).replace("_", " ")


def image_ref_for(descriptor: str) -> str:
    return IMAGE_SCHEME + descriptor


def descriptor_from_ref(image_ref: str) -> str | None:
    return image_ref[len(IMAGE_SCHEME) :] if image_ref.startswith(IMAGE_SCHEME) else None


def fact_line(predicate: str, subject_label: str, object_label: str) -> str:
    return f"The {predicate} of {subject_label} is {object_label}."


def parse_fact_line(line: str) -> tuple[str, str, str] | None:
    m = _FACT_RE.match(line.strip())
    return (m["pred"], m["subj"], m["obj"]) if m else None


def stable_index(n: int, *parts: str) -> int:
    """Deterministic choice in ``range(n)`` keyed by ``parts``."""
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % n


@dataclass(frozen=True)
class Statement:
    predicate: str
    value: str  # entity_id for relations, literal text for attributes
    is_entity: bool


@dataclass(frozen=True)
class SimEntity:
    entity_id: str
    label: str
    sitelinks: int
    statements: tuple[Statement, ...]
    image_descriptor: str | None = None
    image_simple: bool = False

    @property
    def out_links(self) -> tuple[str, ...]:
        return tuple(s.value for s in self.statements if s.is_entity)

    @property
    def image_ref(self) -> str | None:
        return image_ref_for(self.image_descriptor) if self.image_descriptor else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity_id": self.entity_id,
            "label": self.label,
            "sitelinks": self.sitelinks,
            "statements": [[s.predicate, s.value, s.is_entity] for s in self.statements],
            "image_descriptor": self.image_descriptor,
            "image_simple": self.image_simple,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimEntity":
        return cls(
            entity_id=d["entity_id"],
            label=d["label"],
            sitelinks=int(d["sitelinks"]),
            statements=tuple(Statement(p, v, bool(e)) for p, v, e in d["statements"]),
            image_descriptor=d.get("image_descriptor"),
            image_simple=bool(d.get("image_simple", False)),
        )


@dataclass(frozen=True)
class WorldParams:
    n_entities: int = 200
    rarity_fraction: float = 0.4
    max_sitelinks: int = 10
    min_statements: int = 20
    max_statements: int = 28
    min_statements_common: int = 6
    max_sitelinks_common: int = 300
    image_fraction: float = 0.95
    simple_image_fraction: float = 0.05

    def validate(self) -> None:
        if self.n_entities < 1:
            raise BadDistribution("n_entities must be >= 1")
        if not 0.0 <= self.rarity_fraction <= 1.0:
            raise BadDistribution("rarity_fraction must be in [0, 1]")
        if not 0.0 <= self.image_fraction <= 1.0 or not 0.0 <= self.simple_image_fraction <= 1.0:
            raise BadDistribution("image fractions must be in [0, 1]")
        if self.max_sitelinks < 0 or self.max_sitelinks_common <= self.max_sitelinks:
            raise BadDistribution("sitelink ranges are inconsistent")
        if not 2 <= self.min_statements_common < self.min_statements <= self.max_statements:
            raise BadDistribution("statement ranges are inconsistent")
        if self.max_statements > len(RELATIONS) + 1:
            raise BadDistribution(f"max_statements exceeds the {len(RELATIONS) + 1} available predicates")
        if self.n_entities < 2 and self.rarity_fraction > 0:
            raise BadDistribution("relations need at least two entities")


class SimWorld:
    """Immutable entity graph with text and image indices."""

    def __init__(self, entities: list[SimEntity], seed: int, params: WorldParams) -> None:
        self.entities = sorted(entities, key=lambda e: e.entity_id)
        self.seed = seed
        self.params = params
        self.by_id = {e.entity_id: e for e in self.entities}
        self.by_label = {e.label.lower(): e for e in self.entities}
        self._check()

    def _check(self) -> None:
        for e in self.entities:
            for s in e.statements:
                if s.is_entity and s.value not in self.by_id:
                    raise SimError(f"{e.entity_id}: dangling link to {s.value}")

    # -- pages -------------------------------------------------------------

    def label(self, entity_id: str) -> str:
        return self.by_id[entity_id].label

    def value_text(self, s: Statement) -> str:
        return self.label(s.value) if s.is_entity else s.value

    def fact_lines(self, entity: SimEntity) -> list[str]:
        return [fact_line(s.predicate, entity.label, self.value_text(s)) for s in entity.statements]

    def intro_line(self, entity: SimEntity) -> str:
        return f"Statements recorded about {entity.label}: {len(entity.statements)}."

    def page_text(self, entity: SimEntity) -> str:
        return "\n".join([entity.label, self.intro_line(entity), *self.fact_lines(entity)])

    # -- relations -----------------------------------------------------------

    @cached_property
    def backlinks(self) -> dict[str, list[tuple[str, str]]]:
        """object entity_id -> [(subject entity_id, predicate)] in id order."""
        out: dict[str, list[tuple[str, str]]] = defaultdict(list)
        for e in self.entities:
            for s in e.statements:
                if s.is_entity:
                    out[s.value].append((e.entity_id, s.predicate))
        return dict(out)

    def relation(self, subject_id: str, object_id: str) -> str | None:
        for s in self.by_id[subject_id].statements:
            if s.is_entity and s.value == object_id:
                return s.predicate
        return None

    def fact(self, subject_id: str, predicate: str) -> Statement | None:
        for s in self.by_id[subject_id].statements:
            if s.predicate == predicate:
                return s
        return None

    def gate_passing(self, max_sitelinks: int, min_statements: int) -> list[SimEntity]:
        return [e for e in self.entities if e.sitelinks <= max_sitelinks and len(e.statements) >= min_statements]

    def labels_in(self, text: str) -> list[SimEntity]:
        """Entities whose label occurs in ``text`` (case-insensitive)."""
        words = set(tokenize(text))
        found = []
        for e in self.entities:
            if all(w in words for w in tokenize(e.label)) and e.label.lower() in text.lower():
                found.append(e)
        return found

    # -- indices -------------------------------------------------------------

    @cached_property
    def text_index(self) -> dict[str, frozenset[str]]:
        index: dict[str, set[str]] = defaultdict(set)
        for e in self.entities:
            for tok in tokenize(self.page_text(e)):
                index[tok].add(e.entity_id)
        return {k: frozenset(v) for k, v in index.items()}

    @cached_property
    def image_index(self) -> dict[str, str]:
        return {e.image_descriptor: e.entity_id for e in self.entities if e.image_descriptor}

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": "simworld/1",
            "seed": self.seed,
            "params": self.params.__dict__,
            "entities": [e.to_dict() for e in self.entities],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimWorld":
        if d.get("format") != "simworld/1":
            raise SimError(f"unsupported world format {d.get('format')!r}")
        return cls([SimEntity.from_dict(e) for e in d["entities"]], int(d["seed"]), WorldParams(**d["params"]))

    @classmethod
    def load(cls, path: str | Path) -> "SimWorld":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --------------------------------------------------------------------------
# Generation


class _Names:
    def __init__(self, rng: random.Random) -> None:
        self.rng = rng
        self.used: set[str] = set()

    def word(self) -> str:
        c, v = _CONSONANTS, _VOWELS
        while True:
            w = "".join(self.rng.choice(s) for s in (c, v, c, c, v, c))
            if w not in self.used and w not in _RESERVED:
                self.used.add(w)
                return w.capitalize()


def generate_world(seed: int, n_entities: int = 200, params: WorldParams | None = None) -> SimWorld:
    """Build a world; identical ``(seed, params)`` give byte-identical worlds."""
    params = params or WorldParams()
    if params.n_entities != n_entities:
        params = WorldParams(**{**params.__dict__, "n_entities": n_entities})
    params.validate()
    rng = random.Random(seed)
    names = _Names(rng)
    ids = [f"E{i:05d}" for i in range(n_entities)]
    labels = [f"{names.word()} {names.word()}" for _ in ids]
    n_rare = round(params.rarity_fraction * n_entities)
    rare = set(rng.sample(range(n_entities), n_rare))

    entities = []
    for i, eid in enumerate(ids):
        if i in rare:
            sitelinks = rng.randint(0, params.max_sitelinks)
            n_stmt = rng.randint(params.min_statements, params.max_statements)
        elif rng.random() < 0.5:
            sitelinks = rng.randint(params.max_sitelinks + 1, params.max_sitelinks_common)
            n_stmt = rng.randint(params.min_statements_common, params.max_statements)
        else:
            sitelinks = rng.randint(0, params.max_sitelinks)
            n_stmt = rng.randint(params.min_statements_common, params.min_statements - 1)
        n_stmt_rel = min(n_stmt - rng.randint(1, 3), len(RELATIONS), n_entities - 1)
        n_attr = n_stmt - n_stmt_rel
        if n_attr > len(ATTRIBUTES):
            raise BadDistribution("not enough attribute predicates for the statement count")
        objects = rng.sample([j for j in range(n_entities) if j != i], n_stmt_rel)
        stmts = [Statement(p, ids[j], True) for p, j in zip(rng.sample(RELATIONS, n_stmt_rel), objects)]
        stmts += [Statement(p, names.word(), False) for p in rng.sample(ATTRIBUTES, n_attr)]
        rng.shuffle(stmts)
        descriptor = None
        simple = False
        if rng.random() < params.image_fraction:
            descriptor = f"img-{rng.getrandbits(48):012x}"
            simple = rng.random() < params.simple_image_fraction
        entities.append(SimEntity(eid, labels[i], sitelinks, tuple(stmts), descriptor, simple))
    return SimWorld(entities, seed, params)


# --------------------------------------------------------------------------
# Tool backend


class SimWebBackend:
    """Tool backend over a :class:`SimWorld`; read-only and thread-safe."""

    name = "sim"

    def __init__(self, world: SimWorld) -> None:
        self.world = world

    def text_search(self, query: str) -> list[TextSearchResult]:
        w = self.world
        q = set(tokenize(query))
        candidates: set[str] = set()
        for tok in q:
            candidates |= w.text_index.get(tok, frozenset())
        scored = []
        for eid in candidates:
            e = w.by_id[eid]
            title = set(tokenize(e.label))
            body = set(tokenize(w.page_text(e)))
            scored.append((-len(q & title), -len(q & body), eid))
        scored.sort()
        out = []
        for _, _, eid in scored[:5]:
            e = w.by_id[eid]
            out.append(TextSearchResult(page_url(e.label), e.label, w.intro_line(e)))
        return out

    def image_search(self, image_ref: str) -> list[ImageSearchResult]:
        w = self.world
        descriptor = descriptor_from_ref(image_ref)
        owner = w.image_index.get(descriptor or "")
        if owner is None:
            return []
        pool = sorted(eid for eid in w.image_index.values() if eid != owner)
        picks = [owner]
        if pool:
            start = stable_index(len(pool), descriptor)
            picks += [pool[(start + k) % len(pool)] for k in range(min(4, len(pool)))]
        out = []
        for eid in picks:
            e = w.by_id[eid]
            out.append(ImageSearchResult(f"{SITE}/images/{e.image_descriptor}.jpg", page_url(e.label), e.label))
        return out

    def visit(self, url: str, goal: str) -> VisitResult:
        w = self.world
        label = label_from_url(url)
        entity = w.by_label.get(label.lower()) if label else None
        if entity is None:
            return VisitResult(url, goal, "", failure=f"{FETCH_FAILED} HTTP 404")
        goal_tokens = set(tokenize(goal))
        lines = [
            fact_line(s.predicate, entity.label, w.value_text(s))
            for s in entity.statements
            if set(tokenize(s.predicate)) <= goal_tokens
        ]
        if not lines:
            lines = [f"{w.intro_line(entity)} The page does not mention information relevant to the goal."]
        return VisitResult(url, goal, " ".join(lines))


# --------------------------------------------------------------------------
# Oracle


def answer_predicate(world: SimWorld, seed: SimEntity, question: str) -> Statement:
    hits = [s for s in seed.statements if not s.is_entity and f"the {s.predicate} of" in question.lower()]
    if len(hits) != 1:
        raise ProvenanceMissing(f"cannot identify the asked attribute of {seed.label}")
    return hits[0]


def oracle_chain(world: SimWorld, task: Task) -> list[str]:
    """Entity ids from the seed outwards: hidden entities, then the anchor."""
    prov = task.provenance
    if prov is None:
        raise ProvenanceMissing(task.task_id)
    hidden = [world.by_label[h.lower()].entity_id for h in prov.hidden_entities]
    if prov.image_entity is not None:
        anchor = world.by_label[prov.image_entity.lower()].entity_id
    else:
        named = world.labels_in(task.question_text)
        if len(named) != 1:
            raise ProvenanceMissing(f"{task.task_id}: no unique named anchor entity")
        anchor = named[0].entity_id
    seed_id = world.by_label[prov.seed_entity.lower()].entity_id
    chain = hidden + [anchor] if hidden else [anchor]
    if chain[0] != seed_id:
        raise ProvenanceMissing(f"{task.task_id}: provenance chain does not start at the seed")
    return chain


def oracle_solve(world: SimWorld, task: Task) -> tuple[str, list[ToolInvocation]]:
    """Gold answer and the minimal tool-call plan that reaches it.

    The plan resolves the innermost description first: one image search
    (multimodal tasks), one visit per injected fact, one final visit to the
    seed page for the asked attribute.
    """
    chain = oracle_chain(world, task)
    seed = world.by_id[chain[0]]
    asked = answer_predicate(world, seed, task.question_text)
    plan: list[ToolInvocation] = []
    if task.image_ref is not None:
        plan.append(ToolInvocation("image_search", {}))
    for k in range(len(chain) - 1, 0, -1):
        subj, obj = chain[k], chain[k - 1]
        pred = world.relation(subj, obj)
        if pred is None:
            raise ProvenanceMissing(f"{task.task_id}: no relation from {subj} to {obj}")
        label = world.label(subj)
        plan.append(ToolInvocation("visit", {"url": page_url(label), "goal": f"Find the {pred} of {label}."}))
    plan.append(ToolInvocation("visit", {"url": page_url(seed.label), "goal": f"Find the {asked.predicate} of {seed.label}."}))
    return asked.value, plan


def execute_plan(backend: SimWebBackend, task: Task, plan: list[ToolInvocation]) -> tuple[str | None, list[str]]:
    """Run a plan; return the value read from the final fact and all raw observations."""
    observations = []
    for call in plan:
        if call.name == "image_search":
            res = backend.image_search(task.image_ref or "")
            observations.append("\n".join(f"{r.page_link} {r.page_title}" for r in res))
        elif call.name == "visit":
            observations.append(backend.visit(call.arguments["url"], call.arguments["goal"]).summary)
        else:
            observations.append("\n".join(r.link for r in backend.text_search(call.arguments["query"])))
    if not observations:
        return None, observations
    fact = parse_fact_line(observations[-1])
    return (fact[2] if fact else None), observations
