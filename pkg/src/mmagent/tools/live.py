"""Live web providers: Custom Search (text), Vision web detection (image)
and a reader API plus LLM summarizer (visit).

Credentials come from the environment: ``SEARCH_API_KEYS`` (comma
separated, rotated), ``VISION_API_KEY``, ``READER_API_KEY`` and
``SUMMARIZER_API_BASE``.
"""

from __future__ import annotations

import base64
import io
import logging
import os
from dataclasses import dataclass

import httpx
from PIL import Image

from .. import prompts
from ..backends import BackendFailure, LlmBackend
from .gateway import ProviderError, RateLimited
from .keys import KeyPool
from .results import (
    FETCH_FAILED,
    MAX_RESULTS,
    SUMMARIZER_FAILED,
    ImageSearchResult,
    TextSearchResult,
    VisitResult,
    is_valid_url,
)

log = logging.getLogger(__name__)

CSE_URL = "https://www.googleapis.com/customsearch/v1"
VISION_URL = "https://vision.googleapis.com/v1/images:annotate"
READER_URL = "https://r.jina.ai/"


@dataclass
class LiveConfig:
    cse_cx: str = ""
    image_check_timeout: float = 5.0
    request_timeout: float = 30.0
    summary_max_chars: int = 2000
    page_max_chars: int = 100_000


def render_summary_prompt(page: str, goal: str) -> str:
    return prompts.fill(prompts.load("summary"), {"[WEB PAGE CONTENT]": page, "[USER GOAL]": goal})


class LiveWebBackend:
    name = "live"

    def __init__(
        self,
        search_keys: KeyPool,
        summarizer: LlmBackend,
        *,
        vision_key: str | None = None,
        reader_key: str | None = None,
        config: LiveConfig | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.keys = search_keys
        self.summarizer = summarizer
        self.vision_key = vision_key
        self.reader_key = reader_key
        self.config = config or LiveConfig()
        self.client = client or httpx.Client(timeout=self.config.request_timeout, follow_redirects=True)

    @classmethod
    def from_env(cls, summarizer: LlmBackend, config: LiveConfig | None = None) -> "LiveWebBackend":
        return cls(
            KeyPool.from_env(os.environ.get("SEARCH_API_KEYS")),
            summarizer,
            vision_key=os.environ.get("VISION_API_KEY"),
            reader_key=os.environ.get("READER_API_KEY"),
            config=config,
        )

    # -- text search ---------------------------------------------------------

    def text_search(self, query: str) -> list[TextSearchResult]:
        while True:
            key = self.keys.acquire()
            params = {"key": key, "cx": self.config.cse_cx, "q": query, "num": MAX_RESULTS}
            try:
                resp = self.client.get(CSE_URL, params=params)
            except httpx.HTTPError as exc:
                raise ProviderError(f"text_search transport error: {exc}") from exc
            if resp.status_code == 429:
                log.warning("search key rejected with 429, rotating")
                self.keys.exhaust(key)
                continue
            if resp.status_code != 200:
                raise ProviderError(f"text_search HTTP {resp.status_code}")
            items = resp.json().get("items", [])
            out = []
            for item in items:
                link = item.get("link", "")
                if is_valid_url(link):
                    out.append(TextSearchResult(link, item.get("title", ""), item.get("snippet", "")))
            return out[:MAX_RESULTS]

    # -- image search ----------------------------------------------------------

    def _image_ok(self, url: str) -> bool:
        try:
            resp = self.client.get(url, timeout=self.config.image_check_timeout)
            if resp.status_code != 200:
                return False
            with Image.open(io.BytesIO(resp.content)) as img:
                img.verify()
            return True
        except Exception:  # unreachable or not an image; skip the candidate
            return False

    def _image_source(self, image_ref: str) -> dict:
        if image_ref.startswith(("http://", "https://")):
            return {"source": {"imageUri": image_ref}}
        with open(image_ref, "rb") as fh:
            return {"content": base64.b64encode(fh.read()).decode("ascii")}

    def image_search(self, image_ref: str) -> list[ImageSearchResult]:
        if not self.vision_key:
            raise ProviderError("VISION_API_KEY is not set")
        body = {
            "requests": [
                {"image": self._image_source(image_ref), "features": [{"type": "WEB_DETECTION", "maxResults": 50}]}
            ]
        }
        try:
            resp = self.client.post(VISION_URL, params={"key": self.vision_key}, json=body)
        except httpx.HTTPError as exc:
            raise ProviderError(f"image_search transport error: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited("vision API quota exhausted")
        if resp.status_code != 200:
            raise ProviderError(f"image_search HTTP {resp.status_code}")
        responses = resp.json().get("responses") or [{}]
        pages = responses[0].get("webDetection", {}).get("pagesWithMatchingImages", [])
        out: list[ImageSearchResult] = []
        seen: set[str] = set()
        for page in pages:
            link = page.get("url", "")
            if not link or link in seen:
                continue
            candidates = page.get("fullMatchingImages", []) + page.get("partialMatchingImages", [])
            for cand in candidates:
                url = cand.get("url", "")
                if url and self._image_ok(url):
                    seen.add(link)
                    out.append(ImageSearchResult(url, link, page.get("pageTitle", "")))
                    break
            if len(out) == MAX_RESULTS:
                break
        return out

    # -- visit -----------------------------------------------------------------

    def fetch_markdown(self, url: str) -> str:
        headers = {"Authorization": f"Bearer {self.reader_key}"} if self.reader_key else {}
        resp = self.client.get(READER_URL + url, headers=headers)
        if resp.status_code != 200:
            raise httpx.HTTPStatusError(f"reader HTTP {resp.status_code}", request=resp.request, response=resp)
        return resp.text

    def visit(self, url: str, goal: str) -> VisitResult:
        try:
            page = self.fetch_markdown(url)
        except httpx.HTTPError as exc:
            return VisitResult(url, goal, "", failure=f"{FETCH_FAILED} {exc}")
        if not page.strip():
            return VisitResult(url, goal, "", failure=f"{FETCH_FAILED} empty page")
        prompt = render_summary_prompt(page[: self.config.page_max_chars], goal)
        try:
            summary = self.summarizer.complete(prompt).strip()
        except BackendFailure as exc:
            return VisitResult(url, goal, "", failure=f"{SUMMARIZER_FAILED} {exc}")
        if not summary:
            return VisitResult(url, goal, "", failure=f"{SUMMARIZER_FAILED} empty summary")
        return VisitResult(url, goal, summary[: self.config.summary_max_chars])
