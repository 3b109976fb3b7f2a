"""Chat-model clients.

Every client takes a list of ``{"role", "content"}`` messages and returns one
text reply. ``key`` names the call site as ``"<example id>|<stage>"``; live
clients ignore it, scripted ones look their reply up by it.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import httpx

from .errors import ProviderError

log = logging.getLogger(__name__)

Message = Mapping[str, str]


class ChatClient(Protocol):
    name: str
    temperature: float

    def chat(self, messages: Sequence[Message], key: str = "") -> str: ...


class HttpChatClient:
    """OpenAI-compatible ``/chat/completions`` client.

    The bearer token is read from ``api_key_env`` at call time so it never ends
    up in configs or manifests.
    """

    def __init__(self, url: str, model: str, temperature: float = 0.0, timeout: float = 120.0,
                 max_in_flight: int = 4, api_key_env: str = "OPENAI_API_KEY", retries: int = 2,
                 client: httpx.Client | None = None):
        self.url = url.rstrip("/")
        self.model = model
        self.name = model
        self.temperature = temperature
        self.timeout = timeout
        self.api_key_env = api_key_env
        self.retries = retries
        self._gate = threading.BoundedSemaphore(max(1, max_in_flight))
        self._client = client

    def describe(self) -> dict[str, Any]:
        return {"kind": "http", "url": self.url, "model": self.model, "temperature": self.temperature,
                "timeout": self.timeout, "api_key_env": self.api_key_env}

    def _post(self, payload: dict[str, Any]) -> httpx.Response:
        headers = {}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        client = self._client or httpx.Client(timeout=self.timeout)
        try:
            return client.post(f"{self.url}/chat/completions", json=payload, headers=headers)
        finally:
            if self._client is None:
                client.close()

    def chat(self, messages: Sequence[Message], key: str = "") -> str:
        payload = {"model": self.model, "messages": [dict(m) for m in messages], "temperature": self.temperature}
        last: ProviderError | None = None
        for attempt in range(self.retries + 1):
            with self._gate:
                try:
                    resp = self._post(payload)
                except httpx.HTTPError as exc:
                    last = ProviderError(None, f"{self.model}: {exc}")
                    log.warning("chat call %s failed (attempt %d): %s", key, attempt + 1, exc)
                    continue
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"] or ""
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise ProviderError(200, f"malformed chat reply: {exc}") from exc
            last = ProviderError(resp.status_code, resp.text[:500])
            # client errors other than rate limiting will not get better on retry
            if resp.status_code < 500 and resp.status_code != 429:
                break
            log.warning("chat call %s got HTTP %d (attempt %d)", key, resp.status_code, attempt + 1)
        assert last is not None
        raise last


def original_query_section(messages: Sequence[Message]) -> str:
    """The text under ``## Original MongoDB Query`` in the last user message."""
    text = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
    lines = text.splitlines()
    for i, line in enumerate(lines):
        if line.strip() == "## Original MongoDB Query":
            body = []
            for nxt in lines[i + 1:]:
                if nxt.startswith("#") or nxt.startswith("A: "):
                    break
                body.append(nxt)
            return "\n".join(body).strip()
    return ""


class EchoChatClient:
    """Returns the query it was asked to improve, unchanged."""

    name = "echo"
    temperature = 0.0

    def describe(self) -> dict[str, Any]:
        return {"kind": "echo"}

    def chat(self, messages: Sequence[Message], key: str = "") -> str:
        return original_query_section(messages)


class ScriptedChatClient:
    """Replies from a script keyed by ``"<example id>|<stage>"``.

    A value may be a string, or a list consumed one item per call (the last item
    repeats). An item of the form ``{"error": <status>, "message": ...}`` raises
    ``ProviderError``. Keys without a script fall back to ``fallback`` when one is
    given, otherwise they raise.
    """

    def __init__(self, script: Mapping[str, Any], name: str = "scripted",
                 fallback: ChatClient | None = None):
        self.script = dict(script)
        self.name = name
        self.temperature = 0.0
        self.fallback = fallback
        self.calls: list[tuple[str, list[dict[str, str]]]] = []
        self._used: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def describe(self) -> dict[str, Any]:
        return {"kind": "scripted", "name": self.name, "keys": len(self.script)}

    @classmethod
    def from_file(cls, path: str | os.PathLike, **kw) -> "ScriptedChatClient":
        """Load a JSON object, or JSON lines of ``{"key", "reply"}``."""
        text = Path(path).read_text(encoding="utf-8")
        try:
            blob = json.loads(text)
        except json.JSONDecodeError:
            blob = None
        if isinstance(blob, dict):
            return cls(blob, **kw)
        script: dict[str, Any] = {}
        for line in text.splitlines():
            if line.strip():
                rec = json.loads(line)
                script.setdefault(rec["key"], []).append(rec["reply"])
        return cls(script, **kw)

    def chat(self, messages: Sequence[Message], key: str = "") -> str:
        with self._lock:
            self.calls.append((key, [dict(m) for m in messages]))
            if key not in self.script:
                item = None
            else:
                entry = self.script[key]
                if isinstance(entry, list):
                    item = entry[min(self._used[key], len(entry) - 1)] if entry else ""
                else:
                    item = entry
                self._used[key] += 1
        if key not in self.script:
            if self.fallback is not None:
                return self.fallback.chat(messages, key)
            raise ProviderError(None, f"{self.name}: no scripted reply for {key!r}")
        if isinstance(item, dict) and "error" in item:
            raise ProviderError(item.get("error"), item.get("message", "scripted failure"))
        return str(item)
