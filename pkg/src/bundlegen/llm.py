"""Provider-agnostic multi-turn chat with a fully scriptable mock.

The pipeline talks to one interface, :class:`LlmClient.send`, which handles
retries, rate limiting, response caching, and run logging.  Three providers
implement the actual completion:

* :class:`MockProvider` replays a :class:`MockScript` (first matching rule
  wins; rules match on step-tag prefix and optionally on a substring of the
  conversation so far).
* :class:`RemoteChatProvider` posts to a chat-completion endpoint configured
  through environment variables (see README).
* :class:`ReplayProvider` re-serves responses recorded in a previous run log.

Every request/response pair is appended to the run log as one JSON line with
its step tag, so a run can be audited and replayed.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .errors import MockScriptMiss, ProviderError

ENV_CHAT_URL = "BUNDLEGEN_CHAT_URL"
ENV_API_KEY = "BUNDLEGEN_API_KEY"
ENV_MODEL = "BUNDLEGEN_MODEL"


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str


@dataclass
class Conversation:
    """Ordered chat messages plus one step tag per user turn."""

    messages: list[Message] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)

    @classmethod
    def new(cls, system: str | None = None) -> "Conversation":
        conv = cls()
        if system:
            conv.messages.append(Message("system", system))
        return conv

    def validate(self) -> None:
        body = [m for m in self.messages if m.role != "system"]
        for i, msg in enumerate(body):
            expected = "user" if i % 2 == 0 else "assistant"
            if msg.role != expected:
                raise ValueError(f"message {i} has role {msg.role!r}, expected {expected!r}")
        n_user = sum(1 for m in self.messages if m.role == "user")
        if n_user != len(self.tags):
            raise ValueError(f"{n_user} user turns but {len(self.tags)} tags")

    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)

    def to_dict(self) -> dict:
        return {
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "tags": list(self.tags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Conversation":
        conv = cls(
            messages=[Message(m["role"], m["content"]) for m in data["messages"]],
            tags=list(data["tags"]),
        )
        conv.validate()
        return conv


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "mock"  # mock | remote-chat | replay
    model: str = "mock-model"
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 60.0
    rpm: int | None = None
    script_path: str | None = None  # mock
    log_path: str | None = None  # replay

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model": self.model,
            "temperature": self.temperature,
            "max_retries": self.max_retries,
            "timeout": self.timeout,
            "rpm": self.rpm,
            "script_path": self.script_path,
            "log_path": self.log_path,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    tag: str
    sha: str
    model: str
    temperature: float


class ChatProvider(Protocol):
    config: ProviderConfig

    def complete(self, request: ChatRequest) -> str: ...


class TransportError(ProviderError):
    """Retryable remote failure (timeout, 5xx, connection refused)."""


@dataclass
class MockRule:
    """First-match rule: ``tag`` is a step-tag prefix, ``contains`` a required
    substring of the conversation text so far, ``contains_last`` one of the
    latest user message only, ``uses`` an optional budget."""

    response: str
    tag: str | None = None
    contains: str | None = None
    contains_last: str | None = None
    uses: int | None = None

    def matches(self, request: ChatRequest) -> bool:
        if self.uses is not None and self.uses <= 0:
            return False
        if self.tag is not None and not request.tag.startswith(self.tag):
            return False
        if self.contains is not None:
            text = "\n".join(m.content for m in request.messages)
            if self.contains not in text:
                return False
        if self.contains_last is not None:
            if not request.messages or self.contains_last not in request.messages[-1].content:
                return False
        return True


@dataclass
class MockScript:
    rules: list[MockRule] = field(default_factory=list)
    fallback: str | None = None

    def to_dict(self) -> dict:
        return {
            "rules": [
                {
                    "response": r.response,
                    **({"tag": r.tag} if r.tag is not None else {}),
                    **({"contains": r.contains} if r.contains is not None else {}),
                    **({"contains_last": r.contains_last} if r.contains_last is not None else {}),
                    **({"uses": r.uses} if r.uses is not None else {}),
                }
                for r in self.rules
            ],
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MockScript":
        rules = [
            MockRule(
                response=r["response"],
                tag=r.get("tag"),
                contains=r.get("contains"),
                contains_last=r.get("contains_last"),
                uses=r.get("uses"),
            )
            for r in data.get("rules", [])
        ]
        return cls(rules=rules, fallback=data.get("fallback"))

    @classmethod
    def from_file(cls, path: str | Path) -> "MockScript":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", "utf-8")


class MockProvider:
    def __init__(self, script: MockScript, config: ProviderConfig | None = None):
        self.script = script
        self.config = config or ProviderConfig(kind="mock")
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
            for rule in self.script.rules:
                if rule.matches(request):
                    if rule.uses is not None:
                        rule.uses -= 1
                    return rule.response
            if self.script.fallback is not None:
                return self.script.fallback
        raise MockScriptMiss(f"no mock rule matches step tag {request.tag!r}")


class RemoteChatProvider:
    """Chat-completion client. The transport is injectable for tests; the
    default posts OpenAI-style JSON to $BUNDLEGEN_CHAT_URL with
    $BUNDLEGEN_API_KEY as a bearer token."""

    def __init__(
        self,
        config: ProviderConfig,
        transport: Callable[[dict], str] | None = None,
    ):
        self.config = config
        self._transport = transport or self._http_transport

    def _http_transport(self, payload: dict) -> str:
        url = os.environ.get(ENV_CHAT_URL)
        if not url:
            raise ProviderError(f"{ENV_CHAT_URL} is not set")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(ENV_API_KEY)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        request = urllib.request.Request(
            url, data=json.dumps(payload).encode("utf-8"), headers=headers, method="POST"
        )
        try:
            with urllib.request.urlopen(request, timeout=self.config.timeout) as response:
                body = json.loads(response.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise TransportError(f"remote chat returned {exc.code}") from exc
            raise ProviderError(f"remote chat returned {exc.code}") from exc
        except Exception as exc:
            raise TransportError(f"remote chat unreachable: {exc}") from exc
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError("remote chat response missing choices[0].message.content") from exc

    def complete(self, request: ChatRequest) -> str:
        model = self.config.model or os.environ.get(ENV_MODEL, "")
        payload = {
            "model": model,
            "temperature": request.temperature,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        }
        return self._transport(payload)


class ReplayProvider:
    """Serves responses recorded in an earlier run log, keyed by
    (step tag, request hash); repeats are replayed in their original order."""

    def __init__(self, log_path: str | Path, config: ProviderConfig | None = None):
        self.config = config or ProviderConfig(kind="replay")
        self._responses: dict[tuple[str, str], deque[str]] = {}
        for line in Path(log_path).read_text("utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            if "response" not in record:
                continue
            key = (record["tag"], record["request_sha"])
            self._responses.setdefault(key, deque()).append(record["response"])

    def complete(self, request: ChatRequest) -> str:
        queue = self._responses.get((request.tag, request.sha))
        if not queue:
            raise ProviderError(
                f"replay log has no response for tag {request.tag!r} / {request.sha[:12]}"
            )
        return queue.popleft()


class RateLimiter:
    """Token bucket shared by all in-flight requests: ``rpm`` grants per minute."""

    def __init__(
        self,
        rpm: int | None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.rpm = rpm
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._grants: deque[float] = deque()

    def acquire(self) -> None:
        if self.rpm is None:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._grants and now - self._grants[0] >= 60.0:
                    self._grants.popleft()
                if len(self._grants) < self.rpm:
                    self._grants.append(now)
                    return
                wait = 60.0 - (now - self._grants[0])
            self._sleep(max(wait, 0.01))


class RunLog:
    """Append-only JSONL log of every request/response pair in a run."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")


class ResponseCache:
    """Persistent response cache keyed by the request hash."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if self.path.exists():
            for line in self.path.read_text("utf-8").splitlines():
                if line.strip():
                    record = json.loads(line)
                    self._entries[record["sha"]] = record["response"]

    def get(self, sha: str) -> str | None:
        with self._lock:
            return self._entries.get(sha)

    def put(self, sha: str, response: str) -> None:
        with self._lock:
            if sha in self._entries:
                return
            self._entries[sha] = response
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(
                    json.dumps({"sha": sha, "response": response}, ensure_ascii=False) + "\n"
                )


def request_sha(
    model: str, temperature: float, messages: Sequence[Message], salt: str | None
) -> str:
    payload = json.dumps(
        {
            "model": model,
            "temperature": temperature,
            "salt": salt,
            "messages": [[m.role, m.content] for m in messages],
        },
        ensure_ascii=False,
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LlmClient:
    """One chat backend with retries, caching, rate limiting, and logging.

    ``salt`` distinguishes deliberate repetitions of an identical request
    (the rater protocol queries the same prompt three times); without it the
    response cache would collapse them into a single call.
    """

    def __init__(
        self,
        provider: ChatProvider,
        *,
        run_log: RunLog | None = None,
        cache: ResponseCache | None = None,
        limiter: RateLimiter | None = None,
        name: str = "generator",
        backoff: float = 0.5,
    ):
        self.provider = provider
        self.run_log = run_log
        self.cache = cache
        self.limiter = limiter or RateLimiter(provider.config.rpm)
        self.name = name
        self.backoff = backoff

    def send(
        self,
        conversation: Conversation,
        user_message: str,
        step_tag: str,
        *,
        salt: str | None = None,
    ) -> str:
        conversation.validate()
        conversation.messages.append(Message("user", user_message))
        conversation.tags.append(step_tag)
        config = self.provider.config
        sha = request_sha(config.model, config.temperature, conversation.messages, salt)
        request = ChatRequest(
            messages=tuple(conversation.messages),
            tag=step_tag,
            sha=sha,
            model=config.model,
            temperature=config.temperature,
        )

        cached = self.cache.get(sha) if self.cache is not None else None
        if cached is not None:
            response = cached
        else:
            response = self._complete_with_retries(request)
            if self.cache is not None:
                self.cache.put(sha, response)

        if self.run_log is not None:
            self.run_log.append(
                {
                    "tag": step_tag,
                    "provider": self.name,
                    "model": config.model,
                    "request_sha": sha,
                    "message": user_message,
                    "response": response,
                    "cached": cached is not None,
                    "chars": len(user_message) + len(response),
                    "ts": time.time(),
                }
            )
        conversation.messages.append(Message("assistant", response))
        return response

    def _complete_with_retries(self, request: ChatRequest) -> str:
        config = self.provider.config
        attempts = config.max_retries + 1
        delay = self.backoff
        last_error: Exception | None = None
        for attempt in range(1, attempts + 1):
            self.limiter.acquire()
            try:
                return self.provider.complete(request)
            except TransportError as exc:
                last_error = exc
                if self.run_log is not None:
                    self.run_log.append(
                        {
                            "tag": request.tag,
                            "provider": self.name,
                            "attempt": attempt,
                            "error": str(exc),
                            "ts": time.time(),
                        }
                    )
                if attempt < attempts:
                    time.sleep(delay)
                    delay *= 2
        raise ProviderError(
            f"provider failed after {attempts} attempts: {last_error}"
        ) from last_error
