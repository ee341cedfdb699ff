"""Chat-completion gateway shared by every model-backed component.

One wire protocol: OpenAI-compatible ``POST {endpoint}/chat/completions``.
A gateway runs in one of three modes: ``live`` talks to the backend,
``record`` does the same and also appends every exchange to a JSONL fixture,
and ``replay`` answers solely from such a fixture.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import httpx

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


class GatewayError(RuntimeError):
    pass


class GatewayExhausted(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class FixtureMiss(GatewayError):
    pass


class TransientError(Exception):
    """Raised by a backend for failures worth retrying (5xx, 429, network)."""


class Mode(Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass
class ChatRequest:
    model_id: str
    messages: list
    temperature: float = 0.0
    max_output_tokens: Optional[int] = None
    seed_hint: Optional[int] = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        roles = [m["role"] for m in self.messages]
        if any(r not in ROLES for r in roles):
            raise ValueError(f"unknown role in {roles}")
        body = roles[1:] if roles[0] == "system" else roles
        if "system" in body:
            raise ValueError("a system message may only come first")
        for i, r in enumerate(body):
            if r != ("user" if i % 2 == 0 else "assistant"):
                raise ValueError(f"roles must alternate user/assistant after the preamble: {roles}")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "messages": [{"role": m["role"], "content": m["content"]} for m in self.messages],
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "seed_hint": self.seed_hint,
        }

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    def request_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def payload(self) -> dict:
        body = {"model": self.model_id, "messages": self.to_dict()["messages"],
                "temperature": self.temperature}
        if self.max_output_tokens is not None:
            body["max_tokens"] = self.max_output_tokens
        if self.seed_hint is not None:
            body["seed"] = self.seed_hint
        return body


@dataclass
class ChatResponse:
    text: str
    reported_usage: Optional[dict] = None
    latency_ms: int = 0
    attempt_count: int = 1

    def to_dict(self) -> dict:
        return {"text": self.text, "reported_usage": self.reported_usage,
                "latency_ms": self.latency_ms, "attempt_count": self.attempt_count}

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        return cls(d["text"], d.get("reported_usage"), int(d.get("latency_ms", 0)),
                   int(d.get("attempt_count", 1)))


def parse_completion(body) -> tuple[str, Optional[dict]]:
    try:
        text = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse(f"no choices[0].message.content in response: {str(body)[:200]}") from None
    if not isinstance(text, str):
        raise MalformedResponse("message content is not a string")
    usage = body.get("usage") if isinstance(body, dict) else None
    if usage:
        usage = {k: usage.get(k) for k in ("prompt_tokens", "completion_tokens") if k in usage}
    return text, usage or None


class HttpBackend:
    def __init__(self, endpoint: str, api_key_env: str = "OPENAI_API_KEY", timeout: float = 60.0,
                 transport: httpx.BaseTransport | None = None):
        self.url = endpoint.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env) if api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self.client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def send(self, payload: dict) -> dict:
        try:
            resp = self.client.post(self.url, json=payload)
        except httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError:
            raise MalformedResponse("response body is not JSON") from None


class FunctionBackend:
    """Backend wrapping ``fn(payload) -> response body``; used by mocks and tests."""

    def __init__(self, fn: Callable[[dict], dict]):
        self.fn = fn

    def send(self, payload: dict) -> dict:
        return self.fn(payload)


class _RateLimiter:
    def __init__(self, per_minute: Optional[int], clock, sleep):
        self.per_minute = per_minute
        self.clock, self.sleep = clock, sleep
        self.stamps: deque = deque()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        if not self.per_minute:
            return
        while True:
            with self.lock:
                now = self.clock()
                while self.stamps and now - self.stamps[0] >= 60.0:
                    self.stamps.popleft()
                if len(self.stamps) < self.per_minute:
                    self.stamps.append(now)
                    return
                wait = 60.0 - (now - self.stamps[0])
            self.sleep(max(wait, 0.0))


@dataclass
class RetryPolicy:
    max_attempts: int = 5
    base_seconds: float = 1.0
    factor: float = 2.0

    def delay(self, attempt: int) -> float:
        """Pause after failed attempt number ``attempt`` (1-based)."""
        return self.base_seconds * self.factor ** (attempt - 1)


class Gateway:
    def __init__(self, backend=None, mode: Mode | str = Mode.LIVE, fixture_path=None,
                 retry: RetryPolicy | None = None, max_in_flight: int = 8,
                 rate_limit_per_minute: Optional[int] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic):
        self.mode = Mode(mode)
        self.backend = backend
        self.retry = retry or RetryPolicy()
        self.sleep = sleep
        self.clock = clock
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._limiter = _RateLimiter(rate_limit_per_minute, clock, sleep)
        self._lock = threading.Lock()
        self.fixture_path = Path(fixture_path) if fixture_path else None
        self._fixtures: dict[str, dict] = {}
        if self.mode is not Mode.LIVE and self.fixture_path is None:
            raise ValueError(f"{self.mode.value} mode needs a fixture file")
        if self.mode is Mode.REPLAY:
            if not self.fixture_path.exists():
                raise FileNotFoundError(f"fixture file not found: {self.fixture_path}")
            self._fixtures = load_fixtures(self.fixture_path)
        elif self.mode is Mode.RECORD:
            if self.fixture_path.exists():
                self._fixtures = load_fixtures(self.fixture_path)
        if self.mode is not Mode.REPLAY and backend is None:
            raise ValueError("live and record modes need a backend")

    def complete(self, req: ChatRequest) -> ChatResponse:
        key = req.request_hash()
        if self.mode is Mode.REPLAY:
            try:
                return ChatResponse.from_dict(self._fixtures[key]["response"])
            except KeyError:
                raise FixtureMiss(f"no fixture for request {key[:12]} (model {req.model_id})") from None
        if self.mode is Mode.RECORD:
            with self._lock:
                hit = self._fixtures.get(key)
            if hit is not None:
                return ChatResponse.from_dict(hit["response"])
        resp = self._call(req)
        if self.mode is Mode.RECORD:
            self._store(key, req, resp)
        return resp

    def _call(self, req: ChatRequest) -> ChatResponse:
        payload = req.payload()
        last_error = None
        with self._slots:
            for attempt in range(1, self.retry.max_attempts + 1):
                self._limiter.acquire()
                t0 = self.clock()
                try:
                    body = self.backend.send(payload)
                    text, usage = parse_completion(body)
                    latency = int(round((self.clock() - t0) * 1000))
                    return ChatResponse(text, usage, latency, attempt)
                except TransientError as exc:
                    last_error = exc
                    log.warning("attempt %d/%d failed: %s", attempt, self.retry.max_attempts, exc)
                    if attempt < self.retry.max_attempts:
                        self.sleep(self.retry.delay(attempt))
        raise GatewayExhausted(f"gave up after {self.retry.max_attempts} attempts: {last_error}")

    def _store(self, key: str, req: ChatRequest, resp: ChatResponse) -> None:
        entry = {"request_hash": key, "request": req.to_dict(), "response": resp.to_dict()}
        with self._lock:
            if key in self._fixtures:
                return
            self._fixtures[key] = entry
            with open(self.fixture_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")


def load_fixtures(path) -> dict[str, dict]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entry = json.loads(line)
                out[entry["request_hash"]] = entry
    return out


def record_replay(mode: Mode | str, backend=None, fixture_path=None, **kwargs) -> Gateway:
    """Build a gateway in ``live``, ``record`` or ``replay`` mode."""
    return Gateway(backend=backend, mode=mode, fixture_path=fixture_path, **kwargs)
