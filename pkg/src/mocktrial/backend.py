"""Chat-completion backends: scripted (tests), remote OpenAI-compatible, and record/replay."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import httpx

from .errors import AuthMissing, BackendFailure, CassetteMiss, RemoteExhausted, ScriptMiss

log = logging.getLogger(__name__)

ROLE_TAGS = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLE_TAGS:
            raise ValueError(f"role must be one of {ROLE_TAGS}, got {self.role!r}")
        if self.role in ("system", "user") and not self.content.strip():
            raise ValueError(f"{self.role} message content must be non-empty")


class RequestTag(NamedTuple):
    """(case_id, stage, role, turn) used to key scripted responses and for tracing."""

    case_id: str
    stage: str
    role: str
    turn: str

    def __str__(self) -> str:
        return "/".join(self)


@dataclass(frozen=True)
class CompletionRequest:
    messages: tuple[ChatMessage, ...]
    tag: RequestTag
    temperature: float = 0.7
    max_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "tag", RequestTag(*self.tag))
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def payload(self) -> dict:
        return {
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def digest(self) -> str:
        """Hash of everything the model sees; the tag is deliberately excluded."""
        blob = json.dumps(self.payload(), ensure_ascii=False, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Backend:
    def complete(self, request: CompletionRequest) -> str:
        raise NotImplementedError


def complete(backend: Backend, request: CompletionRequest) -> str:
    return backend.complete(request)


# -- scripted -----------------------------------------------------------------------


@dataclass
class ScriptFixture:
    """Canned responses keyed by request tag. ``*`` in a key field matches anything."""

    entries: dict[RequestTag, str] = field(default_factory=dict)
    strict: bool = True
    default: str | None = None

    @classmethod
    def load(cls, path: str | Path) -> ScriptFixture:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        entries: dict[RequestTag, str] = {}
        for item in data.get("entries", []):
            tag = RequestTag(*item["tag"])
            if tag in entries:
                raise ValueError(f"{path}: duplicate script key {tag}")
            entries[tag] = item["response"]
        return cls(entries, strict=bool(data.get("strict", True)), default=data.get("default"))

    def dump(self, path: str | Path) -> None:
        data = {
            "strict": self.strict,
            "default": self.default,
            "entries": [{"tag": list(t), "response": r} for t, r in self.entries.items()],
        }
        Path(path).write_text(json.dumps(data, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    def lookup(self, tag: RequestTag) -> str | None:
        if tag in self.entries:
            return self.entries[tag]
        best = None
        for key, text in self.entries.items():
            if all(k == "*" or k == v for k, v in zip(key, tag)):
                wild = key.count("*")
                if best is None or wild < best[0]:
                    best = (wild, text)
        return None if best is None else best[1]


class ScriptedBackend(Backend):
    """Deterministic playback of a ScriptFixture.

    In non-strict mode an unknown tag gets the fixture's ``default`` text (with
    ``{case_id}``, ``{stage}``, ``{role}``, ``{turn}`` filled in) or, without a
    default, a generic line naming the tag.
    """

    def __init__(self, fixture: ScriptFixture):
        self.fixture = fixture
        self.calls: list[CompletionRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self.calls.append(request)
        text = self.fixture.lookup(request.tag)
        if text is not None:
            return text
        if self.fixture.strict:
            raise ScriptMiss(f"no scripted response for {request.tag}")
        template = self.fixture.default or "（{role}，{stage}，{turn}）"
        return template.format(**request.tag._asdict())


# -- remote -------------------------------------------------------------------------


class RateLimiter:
    """Minimum spacing between requests, shared across threads."""

    def __init__(self, per_second: float | None):
        self.interval = 1.0 / per_second if per_second else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            time.sleep(wait)


TRANSIENT_STATUS = frozenset({408, 429, 500, 502, 503, 504})


class RemoteBackend(Backend):
    """OpenAI-compatible ``/chat/completions`` client with retry and rate limiting."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key: str | None = None,
        api_key_env: str = "MOCKTRIAL_API_KEY",
        timeout: float = 60.0,
        retry_budget: int = 4,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        rate_limit: float | None = None,
        seed: int | None = None,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        self.api_key_env = api_key_env
        self.retry_budget = retry_budget
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.limiter = RateLimiter(rate_limit)
        self.seed = seed
        self._client = client or httpx.Client(timeout=timeout)

    def _url(self) -> str:
        if self.endpoint.endswith("/chat/completions"):
            return self.endpoint
        return self.endpoint + "/chat/completions"

    def complete(self, request: CompletionRequest) -> str:
        if not self.api_key:
            raise AuthMissing(f"no API key; set {self.api_key_env}")
        body = {"model": self.model, **request.payload()}
        if self.seed is not None:
            body["seed"] = self.seed
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last = ""
        for attempt in range(self.retry_budget + 1):
            if attempt:
                delay = min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))
                log.warning("retrying %s in %.2fs (%s)", request.tag, delay, last)
                time.sleep(delay)
            self.limiter.acquire()
            try:
                resp = self._client.post(self._url(), json=body, headers=headers)
            except (httpx.TimeoutException, httpx.TransportError) as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code in TRANSIENT_STATUS:
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise BackendFailure(f"HTTP {resp.status_code} from {self._url()}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendFailure(f"unexpected response shape: {exc}") from None
        raise RemoteExhausted(f"{request.tag}: gave up after {self.retry_budget + 1} attempts ({last})")


# -- record / replay --------------------------------------------------------------------


class Cassette:
    """Line-delimited (digest, request summary, response) records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        rec = json.loads(line)
                        self.records.setdefault(rec["digest"], rec)

    def get(self, digest: str) -> str | None:
        rec = self.records.get(digest)
        return None if rec is None else rec["response"]

    def add(self, request: CompletionRequest, response: str) -> None:
        digest = request.digest()
        rec = {
            "digest": digest,
            "request": {
                "tag": list(request.tag),
                "n_messages": len(request.messages),
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "last_message_head": request.messages[-1].content[:80],
            },
            "response": response,
        }
        with self._lock:
            if digest in self.records:
                return
            self.records[digest] = rec
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")


class RecordReplayBackend(Backend):
    def __init__(self, inner: Backend | None, cassette: str | Path | Cassette, mode: str):
        if mode not in ("record", "replay"):
            raise ValueError("mode must be 'record' or 'replay'")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs an inner backend")
        self.inner = inner
        self.mode = mode
        self.cassette = cassette if isinstance(cassette, Cassette) else Cassette(cassette)
        if mode == "replay" and not self.cassette.path.exists():
            raise FileNotFoundError(self.cassette.path)

    def complete(self, request: CompletionRequest) -> str:
        digest = request.digest()
        if self.mode == "replay":
            text = self.cassette.get(digest)
            if text is None:
                raise CassetteMiss(f"{request.tag}: digest {digest[:12]} not in {self.cassette.path}")
            return text
        cached = self.cassette.get(digest)
        if cached is not None:
            return cached
        text = self.inner.complete(request)
        self.cassette.add(request, text)
        return text


def record_replay_wrap(inner: Backend | None, cassette_path: str | Path, mode: str) -> RecordReplayBackend:
    return RecordReplayBackend(inner, cassette_path, mode)
