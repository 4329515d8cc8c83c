"""Content-addressed response cache with record and replay modes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any

from .gateway import ReplayMiss, ToolBackend
from .results import ImageSearchResult, TextSearchResult, VisitResult


def canonical_key(namespace: str, args: dict[str, Any]) -> str:
    blob = json.dumps({"ns": namespace, "args": args}, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per entry under ``root/<namespace>/<sha256>.json``."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._lock = threading.Lock()
        self._mem: dict[str, Any] = {}

    def _path(self, namespace: str, digest: str) -> Path:
        return self.root / namespace / f"{digest}.json"

    def get(self, namespace: str, args: dict[str, Any]) -> Any:
        digest = canonical_key(namespace, args)
        with self._lock:
            if digest in self._mem:
                return self._mem[digest]
        path = self._path(namespace, digest)
        if not path.exists():
            raise KeyError(digest)
        value = json.loads(path.read_text(encoding="utf-8"))["value"]
        with self._lock:
            self._mem[digest] = value
        return value

    def put(self, namespace: str, args: dict[str, Any], value: Any) -> None:
        digest = canonical_key(namespace, args)
        path = self._path(namespace, digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps({"namespace": namespace, "args": args, "value": value}, ensure_ascii=False, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
        with self._lock:
            self._mem[digest] = value


class RecordedToolBackend:
    """Wraps a tool backend with the cache.

    ``mode="record"`` calls ``inner`` on a miss and stores the answer;
    ``mode="replay"`` never touches ``inner`` (it may be ``None``) and raises
    :class:`ReplayMiss` for anything not recorded.
    """

    def __init__(self, inner: ToolBackend | None, cache: ResponseCache, mode: str = "replay") -> None:
        if mode not in ("record", "replay"):
            raise ValueError(f"unknown cache mode {mode!r}")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs an inner backend")
        self.inner = inner
        self.cache = cache
        self.mode = mode
        self.name = f"recorded({inner.name if inner else 'replay'})"

    def _through(self, tool: str, args: dict[str, Any], call, encode, decode):
        try:
            return decode(self.cache.get(tool, args))
        except KeyError:
            if self.mode == "replay":
                raise ReplayMiss(f"no recording for {tool} {args}") from None
        value = call()
        self.cache.put(tool, args, encode(value))
        return value

    def text_search(self, query: str) -> list[TextSearchResult]:
        return self._through(
            "text_search",
            {"query": query},
            lambda: self.inner.text_search(query),
            lambda v: [r.__dict__ for r in v],
            lambda v: [TextSearchResult(**r) for r in v],
        )

    def image_search(self, image_ref: str) -> list[ImageSearchResult]:
        return self._through(
            "image_search",
            {"image_ref": image_ref},
            lambda: self.inner.image_search(image_ref),
            lambda v: [r.__dict__ for r in v],
            lambda v: [ImageSearchResult(**r) for r in v],
        )

    def visit(self, url: str, goal: str) -> VisitResult:
        return self._through(
            "visit",
            {"url": url, "goal": goal},
            lambda: self.inner.visit(url, goal),
            lambda v: dict(v.__dict__),
            lambda v: VisitResult(**v),
        )
