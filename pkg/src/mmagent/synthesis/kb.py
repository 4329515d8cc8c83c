"""Knowledge-base adapters: where seeds, entity pages and images come from."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol

import httpx

from ..simweb import SimWorld

log = logging.getLogger(__name__)


class KbUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class SeedEntity:
    entity_id: str
    label: str
    sitelinks: int
    statements: int
    page_content: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity_id": self.entity_id,
            "label": self.label,
            "sitelinks": self.sitelinks,
            "statements": self.statements,
            "page_content": self.page_content,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SeedEntity":
        return cls(d["entity_id"], d["label"], int(d["sitelinks"]), int(d["statements"]), d["page_content"])


class KnowledgeBase(Protocol):
    name: str

    def find_seeds(self, max_sitelinks: int, min_statements: int, limit: int) -> list[SeedEntity]: ...

    def entity_page(self, label: str) -> str | None: ...

    def entity_image(self, label: str) -> str | None: ...


class SimKnowledgeBase:
    """KB view of a sim world.

    An entity's KB article is its own page plus one sentence per incoming
    relation (``B is the p of C.``). Those incoming sentences are what the
    info-parsing step turns into a hiding description of ``B``; the web pages
    the agent visits carry only outgoing facts.
    """

    name = "sim-kb"

    def __init__(self, world: SimWorld) -> None:
        self.world = world

    def find_seeds(self, max_sitelinks: int, min_statements: int, limit: int) -> list[SeedEntity]:
        w = self.world
        return [
            SeedEntity(e.entity_id, e.label, e.sitelinks, len(e.statements), w.page_text(e))
            for e in w.gate_passing(max_sitelinks, min_statements)[:limit]
        ]

    def entity_page(self, label: str) -> str | None:
        w = self.world
        e = w.by_label.get(label.strip().lower())
        if e is None:
            return None
        incoming = [f"{e.label} is the {p} of {w.label(subj)}." for subj, p in w.backlinks.get(e.entity_id, [])]
        return "\n".join([w.page_text(e), *incoming])

    def entity_image(self, label: str) -> str | None:
        e = self.world.by_label.get(label.strip().lower())
        return e.image_ref if e else None


class OfflinePageIndex:
    """Directory of Markdown pages from an offline encyclopedia dump.

    ``<root>/<Title_With_Underscores>.md``; lookup is case-insensitive.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        if not self.root.is_dir():
            raise KbUnavailable(f"page index {self.root} is not a directory")
        self._by_title = {p.stem.replace("_", " ").lower(): p for p in self.root.glob("*.md")}

    def get(self, title: str) -> str | None:
        path = self._by_title.get(title.strip().lower())
        return path.read_text(encoding="utf-8") if path else None


SEED_QUERY = """SELECT ?item ?itemLabel ?sitelinks ?statements WHERE {{
  {restrict}?item wikibase:sitelinks ?sitelinks ; wikibase:statements ?statements .
  FILTER(?sitelinks <= {max_sitelinks} && ?statements >= {min_statements})
  SERVICE wikibase:label {{ bd:serviceParam wikibase:language "en". }}
}} LIMIT {limit}"""

IMAGE_QUERY = """SELECT ?image WHERE {{
  ?item rdfs:label "{label}"@en ; wdt:P18 ?image .
}} LIMIT 1"""


class WikidataKnowledgeBase:
    """Live adapter: SPARQL for the rarity gate and images, offline pages for text.

    ``instance_of`` (a Q-id) narrows the seed query; an unrestricted scan of
    the whole graph is too slow for the public endpoint.
    """

    name = "wikidata"

    def __init__(
        self,
        pages: OfflinePageIndex,
        endpoint: str = "https://query.wikidata.org/sparql",
        *,
        instance_of: str | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.pages = pages
        self.endpoint = endpoint
        self.instance_of = instance_of
        self.client = client or httpx.Client(timeout=60.0, headers={"User-Agent": "mmagent/0.1"})

    def _sparql(self, query: str) -> list[dict[str, Any]]:
        try:
            resp = self.client.get(self.endpoint, params={"query": query, "format": "json"})
            resp.raise_for_status()
            return resp.json()["results"]["bindings"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise KbUnavailable(f"SPARQL endpoint failed: {exc}") from exc

    def find_seeds(self, max_sitelinks: int, min_statements: int, limit: int) -> list[SeedEntity]:
        restrict = f"?item wdt:P31 wd:{self.instance_of} .\n  " if self.instance_of else ""
        rows = self._sparql(
            SEED_QUERY.format(restrict=restrict, max_sitelinks=max_sitelinks, min_statements=min_statements, limit=limit)
        )
        seeds = []
        for row in rows:
            label = row["itemLabel"]["value"]
            page = self.pages.get(label)
            if page is None:
                log.debug("no offline page for %s", label)
                continue
            seeds.append(
                SeedEntity(
                    row["item"]["value"].rsplit("/", 1)[-1],
                    label,
                    int(row["sitelinks"]["value"]),
                    int(row["statements"]["value"]),
                    page,
                )
            )
        return seeds

    def entity_page(self, label: str) -> str | None:
        return self.pages.get(label)

    def entity_image(self, label: str) -> str | None:
        escaped = label.replace("\\", "\\\\").replace('"', '\\"')
        rows = self._sparql(IMAGE_QUERY.format(label=escaped))
        return rows[0]["image"]["value"] if rows else None
