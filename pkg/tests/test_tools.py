from __future__ import annotations

import datetime as dt
import io

import httpx
import pytest
from PIL import Image

from mmagent.backends import BackendFailure
from mmagent.tools.cache import RecordedToolBackend, ResponseCache
from mmagent.tools.gateway import (
    BadArguments,
    EmptyQuery,
    NoTaskImage,
    RateLimited,
    ReplayMiss,
    TaskContext,
    ToolGateway,
    UnknownTool,
)
from mmagent.tools.keys import KeyPool
from mmagent.tools.live import CSE_URL, READER_URL, VISION_URL, LiveWebBackend
from mmagent.tools.results import FETCH_FAILED, SUMMARIZER_FAILED, ImageSearchResult, TextSearchResult, VisitResult

CTX = TaskContext("t1", "https://e.org/q.jpg")


class Many:
    name = "many"

    def __init__(self):
        self.calls = []

    def text_search(self, query):
        self.calls.append(("text_search", query))
        return [TextSearchResult(f"https://e.org/{i}", f"t{i}", "s") for i in range(9)]

    def image_search(self, image_ref):
        self.calls.append(("image_search", image_ref))
        # two images per page on the first pages, then distinct pages
        out = []
        for i in range(9):
            out.append(ImageSearchResult(f"https://e.org/{i}a.jpg", f"https://e.org/p{i}", "p"))
            out.append(ImageSearchResult(f"https://e.org/{i}b.jpg", f"https://e.org/p{i}", "p"))
        return out

    def visit(self, url, goal):
        self.calls.append(("visit", url, goal))
        return VisitResult(url, goal, f"summary of {url}")


def test_result_caps_and_dedup():
    gw = ToolGateway(Many())
    assert len(gw.text_search("q")) == 5
    imgs = gw.image_search(CTX)
    assert len(imgs) == 5
    assert len({r.page_link for r in imgs}) == 5
    assert imgs[0].image_url.endswith("0a.jpg")


def test_contract_errors():
    gw = ToolGateway(Many())
    with pytest.raises(EmptyQuery):
        gw.dispatch("text_search", {"query": "  "}, CTX)
    with pytest.raises(NoTaskImage):
        gw.dispatch("image_search", {}, TaskContext("t2"))
    with pytest.raises(BadArguments):
        gw.dispatch("visit", {"url": "https://e.org"}, CTX)
    with pytest.raises(BadArguments):
        gw.dispatch("text_search", {"query": "q", "page": "2"}, CTX)
    with pytest.raises(BadArguments):
        gw.dispatch("text_search", {"query": 3}, CTX)
    with pytest.raises(UnknownTool):
        gw.dispatch("calculator", {}, CTX)


def test_call_turns_errors_into_markers():
    gw = ToolGateway(Many())
    r = gw.call("text_search", {"query": ""}, CTX)
    assert r.error and not r.fatal
    r = gw.call("visit", {"url": "not a url", "goal": "g"}, CTX)
    assert r.visit.failed and r.visit.failure.startswith(FETCH_FAILED)


def test_key_pool_budget_and_rollover():
    day = [dt.date(2025, 1, 1)]
    pool = KeyPool(["a", "b", "c"], daily_budget=2, today=lambda: day[0])
    got = [pool.acquire() for _ in range(6)]
    assert got == ["a", "b", "c", "a", "b", "c"]
    with pytest.raises(RateLimited):
        pool.acquire()
    day[0] = dt.date(2025, 1, 2)
    assert pool.acquire() == "a"
    pool.exhaust("b")
    assert pool.acquire() == "c"


def test_key_pool_rejects_empty():
    with pytest.raises(ValueError):
        KeyPool([])
    assert KeyPool.from_env("x, y ,").keys == ["x", "y"]


def test_record_then_replay(tmp_path):
    inner = Many()
    cache = ResponseCache(tmp_path)
    rec = ToolGateway(RecordedToolBackend(inner, cache, "record"))
    first = [
        rec.call("text_search", {"query": "q"}, CTX),
        rec.call("image_search", {}, CTX),
        rec.call("visit", {"url": "https://e.org/x", "goal": "g"}, CTX),
    ]
    n_calls = len(inner.calls)
    # replay from a fresh cache object with no inner backend at all
    rep = ToolGateway(RecordedToolBackend(None, ResponseCache(tmp_path), "replay"))
    second = [
        rep.call("text_search", {"query": "q"}, CTX),
        rep.call("image_search", {}, CTX),
        rep.call("visit", {"url": "https://e.org/x", "goal": "g"}, CTX),
    ]
    assert [r.to_dict() for r in first] == [r.to_dict() for r in second]
    assert len(inner.calls) == n_calls
    miss = rep.call("text_search", {"query": "never seen"}, CTX)
    assert miss.fatal and "replay miss" in miss.error
    with pytest.raises(ReplayMiss):
        rep.dispatch("text_search", {"query": "never seen"}, CTX)


# --------------------------------------------------------------------------
# live providers over a mock transport


def png_bytes() -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (2, 2)).save(buf, format="PNG")
    return buf.getvalue()


class Summarizer:
    def __init__(self, fail=False):
        self.fail = fail

    def complete(self, prompt, image_ref=None):
        if self.fail:
            raise BackendFailure("down")
        assert "the goal" in prompt
        return "A short summary."


def live(handler, summarizer=None, keys=("k1", "k2")):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return LiveWebBackend(KeyPool(list(keys), 100), summarizer or Summarizer(), vision_key="v", reader_key="r", client=client)


def test_text_search_rotates_on_429():
    seen = []

    def handler(request):
        key = request.url.params["key"]
        seen.append(key)
        if key == "k1":
            return httpx.Response(429)
        items = [{"link": f"https://e.org/{i}", "title": "t", "snippet": "s"} for i in range(7)]
        return httpx.Response(200, json={"items": items})

    backend = live(handler)
    assert str(CSE_URL).startswith("https://")
    res = backend.text_search("hello")
    assert len(res) == 5
    assert seen == ["k1", "k2"]
    assert backend.text_search("again") and seen[-1] == "k2"


def test_text_search_all_keys_limited():
    backend = live(lambda request: httpx.Response(429))
    gw = ToolGateway(backend)
    r = gw.call("text_search", {"query": "q"}, CTX)
    assert r.fatal


def test_image_search_verifies_images():
    good = png_bytes()

    def handler(request):
        url = str(request.url)
        if url.startswith(VISION_URL):
            pages = [
                {"url": "https://e.org/p1", "pageTitle": "P1", "fullMatchingImages": [{"url": "https://img.org/broken.jpg"}, {"url": "https://img.org/ok1.png"}]},
                {"url": "https://e.org/p2", "pageTitle": "P2", "partialMatchingImages": [{"url": "https://img.org/missing.png"}]},
                {"url": "https://e.org/p3", "pageTitle": "P3", "fullMatchingImages": [{"url": "https://img.org/ok3.png"}]},
            ]
            return httpx.Response(200, json={"responses": [{"webDetection": {"pagesWithMatchingImages": pages}}]})
        if url.endswith("ok1.png") or url.endswith("ok3.png"):
            return httpx.Response(200, content=good)
        if url.endswith("broken.jpg"):
            return httpx.Response(200, content=b"not an image")
        return httpx.Response(404)

    res = live(handler).image_search("https://e.org/q.jpg")
    assert [(r.page_link, r.image_url) for r in res] == [
        ("https://e.org/p1", "https://img.org/ok1.png"),
        ("https://e.org/p3", "https://img.org/ok3.png"),
    ]


def test_visit_summarizes():
    def handler(request):
        assert str(request.url).startswith(READER_URL)
        return httpx.Response(200, text="# Page\nlots of text")

    v = live(handler).visit("https://e.org/a", "the goal")
    assert v.summary == "A short summary." and not v.failed


def test_visit_reader_failure():
    v = live(lambda request: httpx.Response(500)).visit("https://e.org/a", "the goal")
    assert v.failed and v.failure.startswith(FETCH_FAILED)


def test_visit_summarizer_failure():
    v = live(lambda request: httpx.Response(200, text="page"), Summarizer(fail=True)).visit("https://e.org/a", "the goal")
    assert v.failed and v.failure.startswith(SUMMARIZER_FAILED)
