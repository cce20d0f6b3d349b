"""Chat-completion backends: an OpenAI-compatible HTTP client and a fixture-driven mock.

Both backends share one call gate so at most max_in_flight requests are
outstanding at a time, and both stamp every exchange with the attempt count
and a terminal ok/failed status. Transient failures (HTTP 429, 5xx,
timeouts, connection errors) are retried with exponential backoff and never
raise; configuration problems raise ConfigError eagerly at construction.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .errors import ConfigError, FixtureMiss, NoJsonFound, UnbalancedJson

Message = dict[str, str]

DEFAULT_API_KEY_ENV = "SUMFEED_API_KEY"


@dataclass(frozen=True)
class BackendConfig:
    model_id: str
    endpoint_url: str = ""
    api_key_ref: str = DEFAULT_API_KEY_ENV
    max_in_flight: int = 4
    retry_max_attempts: int = 5
    retry_base_delay: float = 1.0
    timeout: float = 60.0
    temperature: float = 0.0
    max_output_tokens: int = 2048

    def __post_init__(self):
        if not self.model_id:
            raise ConfigError("model_id must be non-empty")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be at least 1")
        if self.retry_max_attempts < 1:
            raise ConfigError("retry_max_attempts must be at least 1")
        if self.retry_base_delay < 0:
            raise ConfigError("retry_base_delay must be non-negative")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")
        if self.temperature < 0:
            raise ConfigError("temperature must be non-negative")
        if self.max_output_tokens < 1:
            raise ConfigError("max_output_tokens must be at least 1")


@dataclass(frozen=True)
class ChatExchange:
    request_id: str
    messages: tuple[Message, ...]
    response_text: str
    attempts: int
    status: str  # "ok" | "failed"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def fingerprint_messages(messages: Sequence[Message]) -> str:
    """Stable hash of the ordered (role, content) pairs of a request."""
    canonical = json.dumps(
        [[m["role"], m["content"]] for m in messages], ensure_ascii=False
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class MockFixture:
    """Canned responses keyed by request fingerprint.

    A value may be a single string or a list of strings consumed one per
    call with the last entry sticky, which lets tests script retry
    sequences while staying deterministic.
    """

    def __init__(self, responses: Mapping[str, str | Sequence[str]] | None = None):
        self._responses: dict[str, list[str]] = {}
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        for fingerprint, response in (responses or {}).items():
            self.add_response(fingerprint, response)

    def add_response(self, fingerprint: str, response: str | Sequence[str]) -> None:
        seq = [response] if isinstance(response, str) else list(response)
        if not seq or any(not isinstance(r, str) for r in seq):
            raise ConfigError(f"fixture value for {fingerprint} must be a string or list of strings")
        self._responses[fingerprint] = seq

    def add(self, messages: Sequence[Message], response: str | Sequence[str]) -> str:
        """Register a response for a concrete message list; returns its fingerprint."""
        fingerprint = fingerprint_messages(messages)
        self.add_response(fingerprint, response)
        return fingerprint

    def lookup(self, fingerprint: str) -> str:
        with self._lock:
            if fingerprint not in self._responses:
                raise FixtureMiss(fingerprint)
            seq = self._responses[fingerprint]
            index = self._cursor.get(fingerprint, 0)
            self._cursor[fingerprint] = index + 1
            return seq[min(index, len(seq) - 1)]

    def __len__(self) -> int:
        return len(self._responses)

    @classmethod
    def load(cls, path: str | Path) -> "MockFixture":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot load mock fixtures from {path}: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError(f"mock fixture file {path} must hold a JSON object")
        return cls(data)

    def save(self, path: str | Path) -> None:
        payload = {
            fp: seq[0] if len(seq) == 1 else seq for fp, seq in sorted(self._responses.items())
        }
        Path(path).write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


class ChatBackend:
    """Base backend: bounds concurrent requests and counts logical calls."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._count_lock = threading.Lock()
        self._calls = 0

    @property
    def calls(self) -> int:
        with self._count_lock:
            return self._calls

    def complete(self, messages: Sequence[Message], request_id: str | None = None) -> ChatExchange:
        frozen = tuple(dict(m) for m in messages)
        rid = request_id or fingerprint_messages(frozen)
        with self._gate:
            with self._count_lock:
                self._calls += 1
            return self._complete(rid, frozen)

    def _complete(self, request_id: str, messages: tuple[Message, ...]) -> ChatExchange:
        raise NotImplementedError


class MockBackend(ChatBackend):
    """Deterministic backend that answers from a MockFixture and never sleeps."""

    def __init__(self, fixture: MockFixture, config: BackendConfig | None = None,
                 model_id: str = "mock-judge"):
        super().__init__(config or BackendConfig(model_id=model_id))
        self.fixture = fixture

    def _complete(self, request_id: str, messages: tuple[Message, ...]) -> ChatExchange:
        text = self.fixture.lookup(fingerprint_messages(messages))
        return ChatExchange(request_id, messages, text, attempts=1, status="ok")


class HttpBackend(ChatBackend):
    """OpenAI-compatible chat-completions client over HTTP."""

    def __init__(self, config: BackendConfig):
        super().__init__(config)
        if not config.endpoint_url.startswith(("http://", "https://")):
            raise ConfigError(f"endpoint_url must start with http:// or https://, got {config.endpoint_url!r}")
        self._api_key = ""
        if config.api_key_ref:
            key = os.environ.get(config.api_key_ref)
            if key is None:
                raise ConfigError(f"API key environment variable {config.api_key_ref!r} is not set")
            self._api_key = key

    def _complete(self, request_id: str, messages: tuple[Message, ...]) -> ChatExchange:
        url = self.config.endpoint_url.rstrip("/") + "/chat/completions"
        body = {
            "model": self.config.model_id,
            "messages": list(messages),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        attempts = 0
        while attempts < self.config.retry_max_attempts:
            attempts += 1
            text = None
            transient = True
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=self.config.timeout)
            except (requests.Timeout, requests.ConnectionError):
                resp = None
            if resp is not None:
                if resp.status_code == 200:
                    text = _response_content(resp)
                elif resp.status_code != 429 and resp.status_code < 500:
                    transient = False
            if text is not None:
                return ChatExchange(request_id, messages, text, attempts, "ok")
            if not transient:
                return ChatExchange(request_id, messages, "", attempts, "failed")
            if attempts < self.config.retry_max_attempts:
                time.sleep(self.config.retry_base_delay * 2 ** (attempts - 1))
        return ChatExchange(request_id, messages, "", attempts, "failed")


def _response_content(resp: requests.Response) -> str | None:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        return None
    return content if isinstance(content, str) else None


_FENCE = re.compile(r"```[a-zA-Z0-9_-]*")


def extract_json(text: str):
    """Parse the first balanced JSON object or array embedded in free text.

    Markdown code fences are stripped first. Candidate regions that balance
    but fail to parse are skipped in favor of later ones. Raises NoJsonFound
    when no region parses and UnbalancedJson when an opener never closes.
    """
    cleaned = _FENCE.sub("", text)
    unbalanced = False
    i = 0
    while i < len(cleaned):
        if cleaned[i] in "{[":
            end = _scan_balanced(cleaned, i)
            if end is None:
                unbalanced = True
            else:
                try:
                    return json.loads(cleaned[i:end])
                except json.JSONDecodeError:
                    pass
        i += 1
    if unbalanced:
        raise UnbalancedJson("a JSON region opens but never closes")
    raise NoJsonFound("no JSON object or array found")


def _scan_balanced(text: str, start: int) -> int | None:
    depth = 0
    in_string = False
    escaped = False
    for j in range(start, len(text)):
        ch = text[j]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in "{[":
            depth += 1
        elif ch in "}]":
            depth -= 1
            if depth <= 0:
                return j + 1
    return None
