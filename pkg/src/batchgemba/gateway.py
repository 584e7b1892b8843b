"""Chat-completion backends: OpenAI-compatible HTTP and a scriptable mock.

``LLMClient`` wraps a backend with retries, exponential backoff, bounded
parallel dispatch and a thread-safe usage accumulator.
"""

from __future__ import annotations

import dataclasses
import fnmatch
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence, Union

import httpx

from .dataset import EvalBatch, round_half_away
from .prompt import OutputSchema
from .tokenizer import DEFAULT_TOKENIZER

logger = logging.getLogger(__name__)

API_KEY_ENV = "BATCHGEMBA_API_KEY"
DEFAULT_MAX_OUTPUT_TOKENS = 4096


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    """Network failure, timeout or server-side error. Retryable."""


class ConfigurationError(GatewayError):
    """Client-side (4xx) or setup error. Not retried."""


class ProtocolError(GatewayError):
    """The backend answered but the payload is unusable."""


@dataclass(frozen=True)
class UsageRecord:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    source: str = "api_reported"

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.source not in ("api_reported", "locally_counted"):
            raise ValueError(f"unknown usage source {self.source!r}")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    schema: Optional[OutputSchema] = None
    request_tag: str = ""
    seed: Optional[int] = None
    # ground truth for the mock's oracle mode; never sent over the wire
    batch: Optional[EvalBatch] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((r, c) for r, c in self.messages))
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("first message must come from system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")

    def prompt_text(self) -> str:
        return "\n".join(content for _, content in self.messages)


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    usage: Optional[UsageRecord]
    latency_ms: int = 0
    backend_id: str = ""
    attempts: int = 1
    request_tag: str = ""


class Backend(Protocol):
    backend_id: str

    def send(self, request: CompletionRequest) -> CompletionResponse: ...


# -- HTTP -------------------------------------------------------------------


class OpenAIBackend:
    """``POST <base_url>/chat/completions`` with bearer auth."""

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        supports_schema: bool = False,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.supports_schema = supports_schema
        self.backend_id = f"openai:{self.base_url}"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def body(self, request: CompletionRequest) -> dict:
        body: dict[str, Any] = {
            "model": request.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        if request.schema is not None and self.supports_schema:
            body["response_format"] = {
                "type": "json_schema",
                "json_schema": {"name": "batch_evaluation", "schema": request.schema.to_json_schema(), "strict": True},
            }
        return body

    def send(self, request: CompletionRequest) -> CompletionResponse:
        start = time.monotonic()
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=self.body(request))
        except httpx.TimeoutException as exc:
            raise TransportError(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        latency = int((time.monotonic() - start) * 1000)
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ConfigurationError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"response carries no message content: {exc!r}") from None
        if not isinstance(text, str):
            raise ProtocolError("message content is not a string")
        usage = None
        raw = payload.get("usage") if isinstance(payload, dict) else None
        if isinstance(raw, dict) and "prompt_tokens" in raw and "completion_tokens" in raw:
            usage = UsageRecord(int(raw["prompt_tokens"]), int(raw["completion_tokens"]), "api_reported")
        return CompletionResponse(text, usage, latency, self.backend_id, request_tag=request.request_tag)

    def close(self):
        self._client.close()


# -- mock -------------------------------------------------------------------

PER_EXAMPLE_INJECTORS = ("drop_index", "duplicate_index", "wrong_severity", "bad_error_object")
WHOLE_INJECTORS = ("prose", "truncate")


def oracle_evaluations(batch: EvalBatch) -> list[dict]:
    return [
        {
            "index": i,
            "errors": [
                {"severity": s.severity, "category": s.category, "span": ex.span_text(s)} for s in ex.spans
            ],
        }
        for i, ex in enumerate(batch.examples)
    ]


def inject_per_example(evaluations: list[dict], indices: Sequence[int], kinds: Sequence[str], rng) -> list[dict]:
    """Corrupt exactly the evaluations at ``indices``; the rest stay intact."""
    out = [dict(e) for e in evaluations]
    dupes = []
    dropped = set()
    for i in indices:
        kind = rng.choice(list(kinds))
        if kind == "drop_index":
            dropped.add(i)
        elif kind == "duplicate_index":
            dupes.append(dict(out[i]))
        elif kind == "wrong_severity":
            out[i]["errors"] = [{"severity": "severe", "category": "other", "span": ""}]
        elif kind == "bad_error_object":
            out[i]["errors"] = "none"
        else:
            raise ValueError(f"unknown injector {kind!r}")
    return [e for e in out if e["index"] not in dropped] + dupes


class MockBackend:
    """Deterministic scripted backend.

    Script keys (all optional):

    ``mode``          default reply: ``oracle`` (spans of the attached batch),
                      ``empty`` (no errors for every expected index) or ``text``
    ``default_text``  reply for ``mode: text``
    ``responses``     request_tag (or glob) -> text, or {"text", "usage"}
    ``fail``          request_tag (or glob) -> {"times": n, "kind": "transport" | "http_4xx" | "protocol"};
                      ``times: -1`` fails forever
    ``inject``        {"rate", "kinds", "whole_rate", "whole_kinds"}; ``rate`` corrupts exactly
                      round(rate * n) examples of every generated evaluation
    ``report_usage``  include usage in replies (default true)
    ``latency_ms``    [lo, hi] simulated latency
    ``seed``          randomness is derived from (seed, request_tag), never from call order
    """

    def __init__(self, script: Optional[dict] = None, seed: Optional[int] = None):
        self.script = dict(script or {})
        self.seed = seed if seed is not None else int(self.script.get("seed", 0))
        self.mode = self.script.get("mode", "oracle")
        if self.mode not in ("oracle", "empty", "text"):
            raise ConfigurationError(f"unknown mock mode {self.mode!r}")
        self.backend_id = "mock"
        self._lock = threading.Lock()
        self._calls: dict[str, int] = {}
        self._transcript: list[tuple[str, int, str]] = []
        self._in_flight = 0
        self.max_observed_in_flight = 0

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "MockBackend":
        import yaml

        with open(path, encoding="utf-8") as fh:
            script = yaml.safe_load(fh) or {}
        if not isinstance(script, dict):
            raise ConfigurationError(f"mock script {path} must be a mapping")
        return cls(script)

    def _lookup(self, table: str, tag: str):
        entries = self.script.get(table) or {}
        if tag in entries:
            return entries[tag]
        for pattern, value in entries.items():
            if fnmatch.fnmatchcase(tag, pattern):
                return value
        return None

    def _rng(self, tag: str, purpose: str) -> random.Random:
        return random.Random(f"{self.seed}:{tag}:{purpose}")

    def _generate(self, request: CompletionRequest) -> tuple[str, Optional[dict]]:
        scripted = self._lookup("responses", request.request_tag)
        if scripted is not None:
            if isinstance(scripted, dict):
                return str(scripted.get("text", "")), scripted.get("usage")
            return str(scripted), None
        if self.mode == "text":
            return str(self.script.get("default_text", "")), None
        if self.mode == "oracle" and request.batch is not None:
            evaluations = oracle_evaluations(request.batch)
        elif request.schema is not None:
            evaluations = [{"index": i, "errors": []} for i in request.schema.expected_indices]
        else:
            return json.dumps({"evaluations": []}), None

        inject = self.script.get("inject") or {}
        rng = self._rng(request.request_tag, "inject")
        rate = float(inject.get("rate", 0.0))
        if rate > 0:
            k = min(len(evaluations), round_half_away(rate * len(evaluations)))
            chosen = sorted(rng.sample(range(len(evaluations)), k))
            evaluations = inject_per_example(evaluations, chosen, inject.get("kinds", PER_EXAMPLE_INJECTORS), rng)
        text = json.dumps({"evaluations": evaluations}, ensure_ascii=False)
        whole_rate = float(inject.get("whole_rate", 0.0))
        if whole_rate > 0 and rng.random() < whole_rate:
            kind = rng.choice(list(inject.get("whole_kinds", WHOLE_INJECTORS)))
            if kind == "prose":
                text = "The translations look mostly fine to me, with a few small issues."
            elif kind == "truncate":
                text = text[: max(1, len(text) // 2)]
            else:
                raise ConfigurationError(f"unknown injector {kind!r}")
        return text, None

    def send(self, request: CompletionRequest) -> CompletionResponse:
        tag = request.request_tag
        with self._lock:
            attempt = self._calls.get(tag, 0) + 1
            self._calls[tag] = attempt
            self._in_flight += 1
            self.max_observed_in_flight = max(self.max_observed_in_flight, self._in_flight)
        try:
            lo_hi = self.script.get("latency_ms")
            latency = 0
            if lo_hi:
                latency = self._rng(tag, f"latency:{attempt}").randint(int(lo_hi[0]), int(lo_hi[1]))
                time.sleep(latency / 1000)
            failure = self._lookup("fail", tag)
            if failure is not None:
                times = int(failure.get("times", -1))
                if times < 0 or attempt <= times:
                    kind = failure.get("kind", "transport")
                    self._record(tag, attempt, f"<fail:{kind}>")
                    if kind == "transport":
                        raise TransportError(f"scripted transport failure for {tag!r} (attempt {attempt})")
                    if kind == "protocol":
                        raise ProtocolError(f"scripted protocol failure for {tag!r}")
                    raise ConfigurationError(f"scripted HTTP 400 for {tag!r}")
            text, usage = self._generate(request)
            self._record(tag, attempt, text)
            if usage is not None:
                record = UsageRecord(int(usage["prompt_tokens"]), int(usage["completion_tokens"]), "api_reported")
            elif self.script.get("report_usage", True):
                record = UsageRecord(
                    DEFAULT_TOKENIZER.count(request.prompt_text()), DEFAULT_TOKENIZER.count(text), "api_reported"
                )
            else:
                record = None
            return CompletionResponse(text, record, latency, self.backend_id, request_tag=tag)
        finally:
            with self._lock:
                self._in_flight -= 1

    def _record(self, tag: str, attempt: int, text: str):
        with self._lock:
            self._transcript.append((tag, attempt, text))

    def transcript(self) -> list[tuple[str, int, str]]:
        with self._lock:
            return sorted(self._transcript)


# -- client -----------------------------------------------------------------


class LLMClient:
    def __init__(
        self,
        backend: Backend,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        sleep=time.sleep,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.backend = backend
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._lock = threading.Lock()
        self._prompt_tokens = 0
        self._completion_tokens = 0

    @property
    def total_usage(self) -> UsageRecord:
        with self._lock:
            return UsageRecord(self._prompt_tokens, self._completion_tokens)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        for attempt in range(1, self.max_attempts + 1):
            try:
                response = self.backend.send(request)
                break
            except TransportError as exc:
                if attempt == self.max_attempts:
                    raise TransportError(f"{exc} (gave up after {attempt} attempts)") from exc
                delay = self.backoff_base * 2 ** (attempt - 1)
                logger.info("request %s failed (%s); retrying in %.2fs", request.request_tag, exc, delay)
                self._sleep(delay)
        usage = response.usage
        if usage is None:
            usage = UsageRecord(
                DEFAULT_TOKENIZER.count(request.prompt_text()),
                DEFAULT_TOKENIZER.count(response.text),
                "locally_counted",
            )
        with self._lock:
            self._prompt_tokens += usage.prompt_tokens
            self._completion_tokens += usage.completion_tokens
        return dataclasses.replace(response, usage=usage, attempts=attempt, request_tag=request.request_tag)

    def _safe_complete(self, request: CompletionRequest) -> Union[CompletionResponse, GatewayError]:
        try:
            return self.complete(request)
        except GatewayError as exc:
            logger.warning("request %s failed: %s", request.request_tag, exc)
            return exc

    def run_many(
        self, requests: Sequence[CompletionRequest], max_in_flight: int = 4
    ) -> list[Union[CompletionResponse, GatewayError]]:
        """Dispatch requests with at most ``max_in_flight`` outstanding.

        Results are aligned with ``requests``; a failed slot holds the error.
        """
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if max_in_flight == 1:
            return [self._safe_complete(r) for r in requests]
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(self._safe_complete, requests))


def make_backend(
    provider: Optional[str] = None, provider_url: Optional[str] = None, timeout: float = 120.0
) -> Backend:
    """Build a backend from CLI-style specs: ``mock:<script>``, ``openai`` or ``openai-guided``."""
    if provider and provider.startswith("mock:"):
        return MockBackend.from_file(provider[len("mock:"):])
    if provider not in (None, "openai", "openai-guided"):
        raise ConfigurationError(f"unknown provider {provider!r}")
    if not provider_url:
        raise ConfigurationError("--provider-url is required for HTTP providers")
    return OpenAIBackend(provider_url, timeout=timeout, supports_schema=provider == "openai-guided")
