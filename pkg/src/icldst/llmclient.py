"""Pluggable chat-completion backends: live HTTP, scripted mocks, disk cache.

The live backend speaks the common chat-completion wire shape:
POST {model, messages, temperature, max_tokens} -> {choices[0].message.content, usage}.
The cache is an append-only JSONL ledger keyed by request digest, so a warm
re-run at temperature 0 issues zero network calls.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .errors import BackendError, MockMissError

ENDPOINT_ENV = "ICLDST_ENDPOINT"
API_KEY_ENV = "ICLDST_API_KEY"

DEFAULT_MODEL_ID = "gpt-3.5-turbo"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT_TOKENS = 512
DEFAULT_TOKEN_BUDGET = 3600


def estimate_tokens(text: str) -> int:
    """Cheap length-based token estimate (roughly 4 chars per token)."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    model_id: str = DEFAULT_MODEL_ID

    @property
    def digest(self) -> str:
        payload = json.dumps([self.prompt, repr(self.temperature), self.model_id])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    usage: tuple[int, int] = (0, 0)  # (prompt_tokens, output_tokens)
    source: str = "live"  # live | cache | mock


class CompletionBackend(Protocol):
    def complete(self, req: CompletionRequest) -> CompletionResponse: ...


# ---------------------------------------------------------------------------
# live HTTP backend
# ---------------------------------------------------------------------------

Transport = Callable[[str, dict, dict, float], tuple[int, object]]


def _requests_transport(url: str, headers: dict, body: dict, timeout: float) -> tuple[int, object]:
    resp = requests.post(url, headers=headers, json=body, timeout=timeout)
    try:
        payload = resp.json()
    except ValueError:
        payload = resp.text
    return resp.status_code, payload


class LiveBackend:
    """HTTP chat-completion client with bounded retry on transient failures."""

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        max_attempts: int = 5,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        min_interval: float = 0.0,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        self.api_key = api_key or os.environ.get(API_KEY_ENV)
        if not self.endpoint:
            raise BackendError(f"no endpoint configured (set {ENDPOINT_ENV})", category="config")
        self.max_attempts = max_attempts
        self.timeout = timeout
        self.min_interval = min_interval
        self._transport = transport or _requests_transport
        self._sleep = sleep
        self._slots = threading.Semaphore(max_in_flight)
        self._pace_lock = threading.Lock()
        self._last_request_at = 0.0

    def _pace(self) -> None:
        if self.min_interval <= 0:
            return
        with self._pace_lock:
            wait = self._last_request_at + self.min_interval - time.monotonic()
            if wait > 0:
                self._sleep(wait)
            self._last_request_at = time.monotonic()

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        last_error = "no attempt made"
        with self._slots:
            for attempt in range(self.max_attempts):
                if attempt:
                    self._sleep(0.5 * 2 ** (attempt - 1) + random.uniform(0, 0.25))
                self._pace()
                try:
                    status, payload = self._transport(self.endpoint, headers, body, self.timeout)
                except requests.RequestException as exc:
                    last_error = f"network failure: {exc}"
                    continue
                if status in (401, 403):
                    raise BackendError(f"authentication failed (HTTP {status})", category="auth")
                if status == 429 or 500 <= status < 600:
                    last_error = f"HTTP {status}"
                    continue
                if status != 200:
                    raise BackendError(f"unexpected HTTP {status}: {payload!r}", category="protocol")
                try:
                    text = payload["choices"][0]["message"]["content"]
                    usage = payload.get("usage", {})
                    prompt_tokens = int(usage.get("prompt_tokens", 0))
                    output_tokens = int(usage.get("completion_tokens", 0))
                except (KeyError, IndexError, TypeError) as exc:
                    raise BackendError(f"malformed completion payload: {exc}", category="protocol")
                return CompletionResponse(str(text), (prompt_tokens, output_tokens), source="live")
        raise BackendError(f"retries exhausted: {last_error}", category="exhausted")


# ---------------------------------------------------------------------------
# mock backends
# ---------------------------------------------------------------------------

class MockBackend:
    """Deterministic scripted backend; never touches the network.

    Digest-keyed entries answer matching requests; ordinal entries are
    consumed in order and are single-threaded by construction.
    """

    def __init__(
        self,
        by_digest: Mapping[str, str] | None = None,
        ordered: Sequence[str] | None = None,
    ):
        self.by_digest = dict(by_digest or {})
        self._ordered = list(ordered or [])
        self._cursor = 0
        self._owner_thread: int | None = None

    @classmethod
    def from_script(cls, path: str | Path) -> "MockBackend":
        """Load a JSONL script of {match: "digest"|"ordinal", key, response_text}."""
        by_digest: dict[str, str] = {}
        ordered: list[tuple[int, str]] = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                match = record.get("match")
                if match == "digest":
                    by_digest[str(record["key"])] = str(record["response_text"])
                elif match == "ordinal":
                    ordered.append((int(record["key"]), str(record["response_text"])))
                else:
                    raise ValueError(f"line {lineno}: match must be 'digest' or 'ordinal'")
        ordered.sort(key=lambda item: item[0])
        return cls(by_digest=by_digest, ordered=[text for _, text in ordered])

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        text = self.by_digest.get(req.digest)
        if text is None:
            if self._cursor < len(self._ordered):
                me = threading.get_ident()
                if self._owner_thread is None:
                    self._owner_thread = me
                elif self._owner_thread != me:
                    raise BackendError(
                        "ordered mock script used from multiple threads", category="mock_concurrency"
                    )
                text = self._ordered[self._cursor]
                self._cursor += 1
            else:
                raise MockMissError(f"no scripted response for digest {req.digest[:12]}…")
        return CompletionResponse(text, (estimate_tokens(req.prompt), estimate_tokens(text)), source="mock")


class CallableBackend:
    """Mock whose responses are computed by a function of the request."""

    def __init__(self, fn: Callable[[CompletionRequest], str]):
        self._fn = fn

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        text = self._fn(req)
        return CompletionResponse(text, (estimate_tokens(req.prompt), estimate_tokens(text)), source="mock")


_RETRIEVAL_PROMPT_HEAD = "I'm finding helpful exampels"


class GoldOracleBackend:
    """Answers example-selection prompts with the first m indices and state
    prompts with the gold turn-level state looked up by the current utterance.

    Utterances must be unique per turn across the corpus for the lookup to be
    well defined; collisions keep the first occurrence.
    """

    def __init__(self, corpus):
        self._by_utterance: dict[str, dict[str, str]] = {}
        for dialogue in corpus.dialogues:
            for turn in dialogue.turns:
                self._by_utterance.setdefault(turn.user_utterance, turn.gold_turn_state.to_dict())

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        if req.prompt.startswith(_RETRIEVAL_PROMPT_HEAD):
            n = req.prompt.count("Example Number : ")
            m_match = re.search(r"most useful (\d+)", req.prompt)
            m = int(m_match.group(1)) if m_match else 1
            chosen = list(range(min(m, n)))
            explanations = ", ".join('"gold oracle pick"' for _ in chosen)
            text = f"{{answer : {chosen}, explanation : [{explanations}]}}"
        else:
            # state prompts end with "curr : [user] <utterance>" then "label:"
            lines = req.prompt.rstrip().splitlines()
            utterance = ""
            if len(lines) >= 2 and lines[-1].strip() == "label:" \
                    and lines[-2].startswith("curr : [user] "):
                utterance = lines[-2][len("curr : [user] "):]
            state = self._by_utterance.get(utterance)
            if state is None:
                raise MockMissError(f"gold oracle has no state for utterance {utterance!r}")
            text = json.dumps(state, sort_keys=True)
        return CompletionResponse(text, (estimate_tokens(req.prompt), estimate_tokens(text)), source="mock")


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------

class CachingBackend:
    """Append-only JSONL response cache in front of another backend.

    With `inner=None` the cache is authoritative (cache-only mode): any miss
    raises instead of reaching the network.
    """

    def __init__(self, inner: CompletionBackend | None, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()
        self._hits = 0
        self._misses = 0
        self._entries: dict[str, CompletionResponse] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    usage = record.get("usage", [0, 0])
                    self._entries[record["digest"]] = CompletionResponse(
                        record["text"], (int(usage[0]), int(usage[1])), source="cache"
                    )

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            hit = self._entries.get(req.digest)
            if hit is not None:
                self._hits += 1
                return hit
        if self.inner is None:
            raise BackendError(
                f"cache miss for digest {req.digest[:12]}… in cache-only mode", category="cache_miss"
            )
        response = self.inner.complete(req)
        record = {"digest": req.digest, "text": response.text, "usage": list(response.usage)}
        with self._lock:
            self._misses += 1
            self._entries[req.digest] = CompletionResponse(response.text, response.usage, source="cache")
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        return response

    def cache_stats(self) -> tuple[int, int, int]:
        """(hits, misses, size_bytes) for this process's lifetime."""
        size = self.path.stat().st_size if self.path.exists() else 0
        with self._lock:
            return self._hits, self._misses, size


# ---------------------------------------------------------------------------
# facade
# ---------------------------------------------------------------------------

class LlmClient:
    """Binds a backend to fixed decoding parameters for prompt-level callers."""

    def __init__(
        self,
        backend: CompletionBackend,
        model_id: str = DEFAULT_MODEL_ID,
        temperature: float = DEFAULT_TEMPERATURE,
        max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    ):
        self.backend = backend
        self.model_id = model_id
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens

    def complete_text(self, prompt: str) -> CompletionResponse:
        return self.backend.complete(CompletionRequest(
            prompt=prompt,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            model_id=self.model_id,
        ))
