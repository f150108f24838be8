"""Model backends: a generic chat-completion HTTP client and a scripted replay."""

from __future__ import annotations

import fnmatch
import json
import logging
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol

import httpx
import yaml

from .errors import BackendFailure, ConfigError, ScriptExhausted

log = logging.getLogger(__name__)

ROLES = ("episode", "summarizer", "diagnosis", "refiner")


@dataclass(frozen=True)
class ChatRequest:
    role: str
    node_id: str
    messages: tuple[Mapping[str, str], ...]
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def last_user(self) -> str:
        for msg in reversed(self.messages):
            if msg.get("role") == "user":
                return msg.get("content", "")
        return ""


class ModelBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


def message(role: str, content: str) -> dict[str, str]:
    return {"role": role, "content": content}


# -- accounting ----------------------------------------------------------------


class CountingBackend:
    """Wraps a backend and counts every attempted call by role."""

    def __init__(self, inner: ModelBackend):
        self.inner = inner
        self._lock = threading.Lock()
        self.calls: Counter[str] = Counter()
        self.calls_by_node: Counter[tuple[str, str]] = Counter()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls[request.role] += 1
            self.calls_by_node[(request.node_id, request.role)] += 1
        return self.inner.complete(request)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {role: self.calls.get(role, 0) for role in ROLES}


# -- scripted ------------------------------------------------------------------


@dataclass
class ScriptRule:
    response: str = ""
    role: str = "*"
    node: str = "*"
    call: int | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)
    contains: str | None = None
    repeat: bool = False
    fail: bool = False
    used: bool = False

    def matches(self, request: ChatRequest, index: int) -> bool:
        if self.used and not self.repeat:
            return False
        if self.role != "*" and self.role != request.role:
            return False
        if not fnmatch.fnmatchcase(request.node_id, self.node):
            return False
        if self.call is not None and self.call != index:
            return False
        for key, value in self.meta.items():
            if request.meta.get(key) != value:
                return False
        if self.contains is not None and self.contains not in request.last_user:
            return False
        return True


_RULE_KEYS = {"response", "role", "node", "call", "meta", "contains", "repeat", "fail"}


class ScriptedBackend:
    """Deterministic replay backend.

    Rules are tried in order; a rule answers once unless ``repeat`` is set.
    ``call`` selects the per-(role, node) call index, counted from 0. A request
    no rule covers raises :class:`ScriptExhausted`. Temperatures are ignored.
    """

    def __init__(
        self,
        rules: list[ScriptRule] | None = None,
        responder: Callable[[ChatRequest, int], str | None] | None = None,
    ):
        self.rules = list(rules or [])
        self.responder = responder
        self._lock = threading.Lock()
        self._counters: Counter[tuple[str, str]] = Counter()
        self.log: list[tuple[str, str, int]] = []

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            key = (request.role, request.node_id)
            index = self._counters[key]
            self._counters[key] += 1
            self.log.append((request.role, request.node_id, index))
            for rule in self.rules:
                if rule.matches(request, index):
                    rule.used = True
                    if rule.fail:
                        raise BackendFailure(f"scripted failure for {request.role}@{request.node_id}#{index}")
                    return rule.response
        if self.responder is not None:
            answer = self.responder(request, index)
            if answer is not None:
                return answer
        raise ScriptExhausted(f"role={request.role} node={request.node_id} call={index} meta={dict(request.meta)}")

    @classmethod
    def from_data(cls, data: Any) -> "ScriptedBackend":
        entries = data.get("rules") if isinstance(data, dict) else data
        if not isinstance(entries, list):
            raise ConfigError("script", "expected a list of rules or a mapping with 'rules'")
        rules = []
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict):
                raise ConfigError(f"script.rules[{i}]", "rule must be a mapping")
            unknown = set(entry) - _RULE_KEYS
            if unknown:
                raise ConfigError(f"script.rules[{i}]", f"unknown keys {sorted(unknown)}")
            rules.append(ScriptRule(**entry))
        return cls(rules)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("script", f"cannot read {path}: {exc}") from exc
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        return cls.from_data(data)


# -- HTTP ----------------------------------------------------------------------


@dataclass
class HttpSettings:
    base_url: str
    model: str
    api_key_env: str = "SCAFFOLD_EVOLVE_API_KEY"
    temperature: Mapping[str, float] = field(default_factory=lambda: {"refiner": 1.0})
    max_tokens: int = 10240
    max_attempts: int = 4
    backoff: float = 1.0
    timeout: float = 600.0


_RETRY_STATUS = {408, 409, 429}


class HttpChatBackend:
    """Chat-completion client: role/content message list in, first choice out."""

    def __init__(
        self,
        settings: HttpSettings,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.settings = settings
        self.client = client or httpx.Client(timeout=settings.timeout)
        self.sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        secret = os.environ.get(self.settings.api_key_env)
        if secret:
            headers["Authorization"] = f"Bearer {secret}"
        return headers

    def complete(self, request: ChatRequest) -> str:
        s = self.settings
        payload: dict[str, Any] = {
            "model": s.model,
            "messages": [dict(m) for m in request.messages],
            "max_tokens": s.max_tokens,
        }
        if request.role in s.temperature:
            payload["temperature"] = s.temperature[request.role]
        url = s.base_url.rstrip("/") + "/chat/completions"
        last_error = "no attempt made"
        for attempt in range(1, s.max_attempts + 1):
            try:
                resp = self.client.post(url, json=payload, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    return _first_choice(resp)
                last_error = f"HTTP {resp.status_code}"
                if resp.status_code < 500 and resp.status_code not in _RETRY_STATUS:
                    raise BackendFailure(f"{last_error}: {resp.text[:200]}")
            if attempt < s.max_attempts:
                delay = s.backoff * 2 ** (attempt - 1)
                log.warning("chat call failed (%s); retry %d in %.1fs", last_error, attempt, delay)
                self.sleep(delay)
        raise BackendFailure(f"giving up after {s.max_attempts} attempts: {last_error}")


def _first_choice(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendFailure(f"malformed completion payload: {exc}") from exc
    if not isinstance(content, str):
        raise BackendFailure("completion content is not text")
    return content
