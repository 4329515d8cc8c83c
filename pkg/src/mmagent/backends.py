"""Model backends: the policy that drives rollouts and the single-shot LLMs
used for synthesis, filtering, summarizing and judging.

Live backends speak the OpenAI-compatible ``/chat/completions`` protocol, so
any vLLM/SGLang/hosted endpoint works. Scripted backends for the simulated
web live in :mod:`mmagent.sim_agents`.
"""

from __future__ import annotations

import base64
import mimetypes
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Protocol

import httpx

from .tools.cache import ResponseCache
from .tools.gateway import ReplayMiss


class BackendFailure(RuntimeError):
    """A model backend could not produce a response."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.6
    top_p: float = 0.9
    max_tokens: int | None = None
    presence_penalty: float | None = None
    seed: int | None = None


class LlmBackend(Protocol):
    name: str

    def complete(self, prompt: str, image_ref: str | None = None) -> str: ...


class PolicyBackend(Protocol):
    name: str

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str: ...


def image_url_for(image_ref: str) -> str:
    """HTTP(S) and data URLs pass through; local files become data URLs."""
    if image_ref.startswith(("http://", "https://", "data:")):
        return image_ref
    path = Path(image_ref)
    mime = mimetypes.guess_type(path.name)[0] or "image/png"
    return f"data:{mime};base64,{base64.b64encode(path.read_bytes()).decode('ascii')}"


def to_chat_messages(system_prompt: str | None, messages: list[dict[str, Any]]) -> list[dict[str, Any]]:
    out: list[dict[str, Any]] = []
    if system_prompt is not None:
        out.append({"role": "system", "content": system_prompt})
    for msg in messages:
        role = "user" if msg["role"] == "tool" else msg["role"]
        image = msg.get("image")
        if image:
            content: Any = [
                {"type": "image_url", "image_url": {"url": image_url_for(image)}},
                {"type": "text", "text": msg["content"]},
            ]
        else:
            content = msg["content"]
        out.append({"role": role, "content": content})
    return out


class ChatBackend:
    """OpenAI-compatible chat endpoint usable as both LLM and policy."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 600.0,
        params: SamplingParams | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.params = params or SamplingParams(temperature=0.0, top_p=1.0)
        self.client = client or httpx.Client(timeout=timeout)
        self.name = f"chat:{model}"

    def _post(self, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        body: dict[str, Any] = {"model": self.model, "messages": messages}
        body.update({k: v for k, v in asdict(params).items() if v is not None})
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise BackendFailure(f"{self.name}: {exc}") from exc

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        msg: dict[str, Any] = {"role": "user", "content": prompt}
        if image_ref:
            msg["image"] = image_ref
        return self._post(to_chat_messages(None, [msg]), self.params)

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        return self._post(to_chat_messages(system_prompt, messages), params)


class RecordedBackend:
    """Record/replay wrapper for LLM and policy backends."""

    def __init__(self, inner: Any, cache: ResponseCache, mode: str = "replay", namespace: str = "llm") -> None:
        if mode not in ("record", "replay"):
            raise ValueError(f"unknown cache mode {mode!r}")
        self.inner = inner
        self.cache = cache
        self.mode = mode
        self.namespace = namespace
        self.name = f"recorded({getattr(inner, 'name', namespace)})"
        self._lock = threading.Lock()

    def _through(self, args: dict[str, Any], call) -> str:
        try:
            return self.cache.get(self.namespace, args)
        except KeyError:
            if self.mode == "replay" or self.inner is None:
                raise ReplayMiss(f"no recording in {self.namespace}") from None
        value = call()
        self.cache.put(self.namespace, args, value)
        return value

    def complete(self, prompt: str, image_ref: str | None = None) -> str:
        return self._through({"prompt": prompt, "image_ref": image_ref}, lambda: self.inner.complete(prompt, image_ref))

    def generate(self, system_prompt: str, messages: list[dict[str, Any]], params: SamplingParams) -> str:
        args = {"system": system_prompt, "messages": messages, "params": asdict(params)}
        return self._through(args, lambda: self.inner.generate(system_prompt, messages, params))
