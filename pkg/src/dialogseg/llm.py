"""Chat-completion client over an OpenAI-compatible wire protocol.

Three interchangeable backends: ``HttpBackend`` talks to a live
endpoint with retry and backoff, ``ReplayBackend`` serves recorded
fixtures keyed by a canonical request digest, and ``ScriptedBackend``
calls a programmable responder (for tests and oracles).

Fixtures are one JSON file per request, named ``<digest>.json`` and
written atomically (temp file then rename), so an interrupted run never
leaves a partial fixture readable.
"""

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field

from .errors import (
    ReplayMissError,
    ResponseParseError,
    ResponseValidationError,
    TransportError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")

    @classmethod
    def single(
        cls,
        model: str,
        prompt: str,
        temperature: float = 0.0,
        max_tokens: int | None = None,
        seed: int | None = None,
    ) -> "ChatRequest":
        return cls(
            model=model,
            messages=(Message(role="user", content=prompt),),
            temperature=temperature,
            max_tokens=max_tokens,
            seed=seed,
        )


def canonical_payload(request: ChatRequest) -> dict:
    """Wire-shaped dict with every digest-relevant field, order preserved."""
    return {
        "model": request.model,
        "messages": [
            {"role": m.role, "content": m.content} for m in request.messages
        ],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "seed": request.seed,
    }


def canonical_digest(request: ChatRequest) -> str:
    """sha256 over canonical JSON: key order is sorted, message order is not."""
    blob = json.dumps(
        canonical_payload(request),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _fixture_path(fixture_dir: str, digest: str) -> str:
    return os.path.join(fixture_dir, digest + ".json")


def write_fixture(fixture_dir: str, request: ChatRequest, response: str) -> str:
    """Persist a (request, response) pair atomically; returns the digest."""
    digest = canonical_digest(request)
    os.makedirs(fixture_dir, exist_ok=True)
    payload = {
        "digest": digest,
        "request": canonical_payload(request),
        "response": response,
    }
    fd, tmp = tempfile.mkstemp(dir=fixture_dir, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    os.replace(tmp, _fixture_path(fixture_dir, digest))
    return digest


class HttpBackend:
    """Live OpenAI-compatible chat endpoint with retry and backoff."""

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        max_in_flight: int = 4,
        session=None,
        sleeper=time.sleep,
    ):
        if session is None:
            import requests

            session = requests.Session()
        self.base_url = base_url
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.session = session
        self.sleeper = sleeper
        self._gate = threading.Semaphore(max_in_flight)

    def _url(self) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        if base.endswith("/v1"):
            return base + "/chat/completions"
        return base + "/v1/chat/completions"

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            payload["max_tokens"] = request.max_tokens
        if request.seed is not None:
            payload["seed"] = request.seed
        headers = {"Content-Type": "application/json"}
        key = os.getenv(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"

        last_error = "no attempt made"
        for attempt in range(self.max_attempts):
            if attempt > 0:
                self.sleeper(self.backoff_base * self.backoff_factor ** (attempt - 1))
            try:
                with self._gate:
                    resp = self.session.post(
                        self._url(), json=payload, headers=headers, timeout=self.timeout
                    )
            except Exception as exc:
                last_error = f"connection error: {exc}"
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise TransportError(
                        f"malformed completion response: {exc}"
                    ) from exc
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            raise TransportError(f"completion endpoint returned HTTP {resp.status_code}")
        raise TransportError(
            f"giving up after {self.max_attempts} attempts; last error: {last_error}"
        )


class ReplayBackend:
    """Serves recorded fixtures; optionally records through a fallback.

    In strict mode a miss raises ReplayMissError naming the digest. With
    ``strict=False`` and a ``fallback`` backend, misses are fetched from
    the fallback and recorded into the fixture directory.
    """

    def __init__(self, fixture_dir: str, strict: bool = True, fallback=None):
        self.fixture_dir = fixture_dir
        self.strict = strict
        self.fallback = fallback
        self.hits = 0
        self.misses = 0
        self.access_log: list[str] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        digest = canonical_digest(request)
        with self._lock:
            self.access_log.append(digest)
        path = _fixture_path(self.fixture_dir, digest)
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
            with self._lock:
                self.hits += 1
            return payload["response"]
        with self._lock:
            self.misses += 1
        if not self.strict and self.fallback is not None:
            response = self.fallback.complete(request)
            write_fixture(self.fixture_dir, request, response)
            return response
        raise ReplayMissError(
            f"no fixture for request digest {digest} in {self.fixture_dir}",
            digest=digest,
        )


class ScriptedBackend:
    """Calls ``responder(request) -> str``; keeps a log of every request."""

    def __init__(self, responder):
        self.responder = responder
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.requests.append(request)
        return self.responder(request)


class RecordingBackend:
    """Delegates to an inner backend and records every exchange."""

    def __init__(self, inner, fixture_dir: str):
        self.inner = inner
        self.fixture_dir = fixture_dir
        self.recorded: list[str] = []

    def complete(self, request: ChatRequest) -> str:
        response = self.inner.complete(request)
        self.recorded.append(write_fixture(self.fixture_dir, request, response))
        return response


def complete(request: ChatRequest, backend) -> str:
    """Run one chat completion against whichever backend is configured."""
    return backend.complete(request)


@dataclass(frozen=True)
class LlmClient:
    """A backend plus the fixed model parameters used for every call."""

    backend: object
    model: str
    temperature: float = 0.0
    max_tokens: int | None = None
    seed: int | None = None

    def complete_text(self, prompt: str) -> str:
        request = ChatRequest.single(
            model=self.model,
            prompt=prompt,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            seed=self.seed,
        )
        return complete(request, self.backend)


REPAIR_INSTRUCTION = (
    "Your previous reply could not be used. Respond again with a single "
    "valid JSON value matching the requested schema, and nothing else."
)


def complete_json(client: LlmClient, prompt: str, parse_fn):
    """Complete and parse; on a malformed reply, retry once with a nudge.

    ``parse_fn`` should raise ResponseParseError or
    ResponseValidationError for unusable replies.
    """
    text = client.complete_text(prompt)
    try:
        return parse_fn(text)
    except (ResponseParseError, ResponseValidationError) as first:
        logger.warning("unusable model reply (%s); retrying once", first)
        text = client.complete_text(prompt + "\n\n" + REPAIR_INSTRUCTION)
        return parse_fn(text)
