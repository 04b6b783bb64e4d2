"""Text-completion backends: chat-completions HTTP client, scripted mock and a
record/replay cassette wrapper."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

logger = logging.getLogger(__name__)

API_KEY_ENV = "EXPLINGO_API_KEY"
API_BASE_ENV = "EXPLINGO_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com/v1"


class BackendError(RuntimeError):
    """Base class for completion failures."""


class BackendTimeout(BackendError):
    pass


class TransportError(BackendError):
    pass


class MalformedResponseError(BackendError):
    pass


class CacheMissError(BackendError):
    def __init__(self, key: str):
        super().__init__(f"no recorded completion for prompt hash {key}")
        self.key = key


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def key(self) -> str:
        return hash_prompt(self.prompt, self.temperature, self.max_tokens, self.seed)


@dataclass(frozen=True)
class TokenUsage:
    input: int = 0
    output: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.input + other.input, self.output + other.output)


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    usage: TokenUsage = TokenUsage()
    latency_ms: int = 0


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_s: float = 0.5

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("retry max_attempts must be >= 1")
        if self.backoff_s < 0:
            raise ValueError("retry backoff must be >= 0")


def hash_prompt(
    prompt: str, temperature: float = 0.0, max_tokens: int = 512, seed: int | None = None
) -> str:
    """SHA-256 over a canonical JSON encoding of the prompt and sampling params."""
    payload = json.dumps(
        {
            "prompt": prompt,
            "temperature": float(temperature),
            "max_tokens": int(max_tokens),
            "seed": seed,
        },
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    return len(text.split())


class Backend:
    """Base class. Subclasses implement ``_complete``; ``complete`` adds the
    in-flight limit and usage accounting."""

    def __init__(self, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.max_in_flight = max_in_flight
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._usage_lock = threading.Lock()
        self._usage = TokenUsage()
        self._calls = 0

    def __deepcopy__(self, memo):
        # a backend is a shared client handle; copies of estimators share it
        return self

    @property
    def usage(self) -> TokenUsage:
        with self._usage_lock:
            return self._usage

    @property
    def calls(self) -> int:
        with self._usage_lock:
            return self._calls

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        with self._slots:
            response = self._complete(request)
        with self._usage_lock:
            self._usage = self._usage + response.usage
            self._calls += 1
        return response

    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError


Responder = Callable[[CompletionRequest], str]


class MockBackend(Backend):
    """Scripted, fully deterministic backend.

    Lookup order for a request: ``script`` keyed by prompt hash, then by the
    exact prompt text, then the first ``rules`` entry whose substring occurs
    in the prompt, then ``responder``, then ``default``. A script value that is
    a list is indexed by ``request.seed`` (``None`` counts as 0), which lets
    repeated grading calls receive distinct scripted answers.
    """

    def __init__(
        self,
        script: Mapping[str, "str | Sequence[str]"] | None = None,
        rules: Sequence[tuple[str, "str | Sequence[str]"]] = (),
        responder: Responder | None = None,
        default: str | None = None,
        max_in_flight: int = 4,
    ):
        super().__init__(max_in_flight)
        self.script = dict(script or {})
        self.rules = [(str(m), r) for m, r in rules]
        self.responder = responder
        self.default = default

    @staticmethod
    def _pick(value: "str | Sequence[str]", seed: int | None) -> str:
        if isinstance(value, str):
            return value
        value = list(value)
        return str(value[(seed or 0) % len(value)])

    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        text: str | None = None
        for lookup in (request.key, request.prompt):
            if lookup in self.script:
                text = self._pick(self.script[lookup], request.seed)
                break
        if text is None:
            for match, value in self.rules:
                if match in request.prompt:
                    text = self._pick(value, request.seed)
                    break
        if text is None and self.responder is not None:
            text = self.responder(request)
        if text is None:
            text = self.default
        if text is None:
            raise CacheMissError(request.key)
        usage = TokenUsage(estimate_tokens(request.prompt), estimate_tokens(text))
        return CompletionResponse(text, usage, 0)

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "MockBackend":
        """Load a script file: ``{"script": {...}, "rules": [[match, response], ...],
        "default": text}``."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = [(r["match"], r["response"]) if isinstance(r, dict) else tuple(r)
                 for r in data.get("rules", [])]
        if data.get("demo"):
            kwargs.setdefault("responder", demo_responder)
        return cls(script=data.get("script"), rules=rules, default=data.get("default"), **kwargs)


class HTTPBackend(Backend):
    """Chat-completions client posting a single user message per request."""

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        model: str = "gpt-4o",
        timeout_s: float = 60.0,
        retry: RetryPolicy = RetryPolicy(),
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        super().__init__(max_in_flight)
        self.api_base = (api_base or os.environ.get(API_BASE_ENV) or DEFAULT_API_BASE).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.model = model
        self.timeout_s = timeout_s
        self.retry = retry
        self._session = session or requests.Session()

    def _payload(self, request: CompletionRequest) -> dict:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        return payload

    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        url = f"{self.api_base}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: BackendError | None = None
        for attempt in range(1, self.retry.max_attempts + 1):
            started = time.monotonic()
            try:
                resp = self._session.post(
                    url, json=self._payload(request), headers=headers, timeout=self.timeout_s
                )
            except requests.Timeout as exc:
                last_error = BackendTimeout(f"request timed out after {self.timeout_s}s: {exc}")
            except requests.RequestException as exc:
                last_error = TransportError(f"transport failure: {exc}")
            else:
                latency = int((time.monotonic() - started) * 1000)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                elif resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    return self._parse(resp, latency)
            logger.warning("completion attempt %d/%d failed: %s", attempt,
                           self.retry.max_attempts, last_error)
            if attempt < self.retry.max_attempts:
                time.sleep(self.retry.backoff_s * 2 ** (attempt - 1))
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse(resp: requests.Response, latency_ms: int) -> CompletionResponse:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected provider payload: {resp.text[:200]}") from exc
        if not isinstance(text, str):
            raise MalformedResponseError("provider returned no text content")
        usage = body.get("usage") or {}
        return CompletionResponse(
            text,
            TokenUsage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
            latency_ms,
        )


class ReplayBackend(Backend):
    """Cassette-backed backend.

    Recorded completions are looked up by prompt hash. On a miss, a strict
    replay raises :class:`CacheMissError`; otherwise the ``inner`` backend is
    called and the result appended to the cassette (JSONL, one record per
    line: ``key``, ``request_summary``, ``response_text``, ``usage``).
    """

    def __init__(
        self,
        path: str | Path,
        inner: Backend | None = None,
        strict: bool = True,
        max_in_flight: int = 4,
    ):
        super().__init__(max_in_flight)
        if not strict and inner is None:
            raise ValueError("recording (strict=False) needs an inner backend")
        self.path = Path(path)
        self.inner = inner
        self.strict = strict
        self._write_lock = threading.Lock()
        self._records: dict[str, dict] = {}
        if self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    self._records[record["key"]] = record
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{self.path}:{lineno}: bad cassette record") from exc

    def __len__(self) -> int:
        return len(self._records)

    def _complete(self, request: CompletionRequest) -> CompletionResponse:
        key = request.key
        record = self._records.get(key)
        if record is not None:
            usage = record.get("usage") or {}
            return CompletionResponse(
                record["response_text"],
                TokenUsage(int(usage.get("input", 0)), int(usage.get("output", 0))),
                0,
            )
        if self.strict or self.inner is None:
            raise CacheMissError(key)
        response = self.inner.complete(request)
        record = {
            "key": key,
            "request_summary": {
                "prompt_head": request.prompt[:80],
                "prompt_chars": len(request.prompt),
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "seed": request.seed,
            },
            "response_text": response.text,
            "usage": {"input": response.usage.input, "output": response.usage.output},
        }
        with self._write_lock:
            if key not in self._records:
                self._records[key] = record
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        return response


_TRIPLE = re.compile(r"\(([^,()]+),\s*([^,()]*),\s*([^,()]+)\)")


def demo_responder(request: CompletionRequest) -> str:
    """Offline stand-in for a real model.

    Narrator prompts get a template narrative built from the target
    explanation; grader prompts get a hash-derived grade that is usually the
    rubric maximum. Output depends only on the request, so it is reproducible.
    """
    prompt = request.prompt
    digest = int(request.key[:8], 16)
    if prompt.rstrip().endswith("Narrative:"):
        target = prompt.rsplit("Explanation: ", 1)[-1].split("\n", 1)[0]
        clauses = []
        for name, value, contribution in _TRIPLE.findall(target):
            direction = "increases" if float(contribution) >= 0 else "decreases"
            clauses.append(f"the {name.strip()} ({value.strip()}) {direction} the prediction")
        if not clauses:
            return "The model's prediction is explained by its most important features."
        text = "; ".join(clauses)
        return text[0].upper() + text[1:] + "."
    if "How accurate" in prompt:
        top = 1
    elif "How completely" in prompt:
        top = 2
    else:
        top = 4
    drop = 1 if digest % 11 == 0 else 0
    return str(max(0, top - drop))


@dataclass
class BackendConfig:
    """Declarative backend selection. ``make_backend`` turns it into a backend."""

    kind: str = "mock"
    api_base: str | None = None
    api_key: str | None = None
    model: str = "gpt-4o"
    timeout_s: float = 60.0
    max_attempts: int = 3
    backoff_s: float = 0.5
    max_in_flight: int = 4
    script: str | None = None
    cassette: str | None = None
    strict: bool = True
    record_kind: str = "http"

    def __post_init__(self):
        if self.kind not in ("http", "mock", "replay"):
            raise ValueError(f"backend kind must be http, mock or replay, got {self.kind!r}")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.record_kind not in ("http", "mock"):
            raise ValueError("record_kind must be http or mock")


def make_backend(config: BackendConfig) -> Backend:
    if config.kind == "mock":
        if config.script:
            return MockBackend.from_file(config.script, max_in_flight=config.max_in_flight)
        return MockBackend(responder=demo_responder, max_in_flight=config.max_in_flight)
    if config.kind == "http":
        return HTTPBackend(
            api_base=config.api_base,
            api_key=config.api_key,
            model=config.model,
            timeout_s=config.timeout_s,
            retry=RetryPolicy(config.max_attempts, config.backoff_s),
            max_in_flight=config.max_in_flight,
        )
    if not config.cassette:
        raise ValueError("replay backend needs a cassette path")
    inner = None
    if not config.strict:
        inner = make_backend(
            BackendConfig(**{**config.__dict__, "kind": config.record_kind, "cassette": None})
        )
    return ReplayBackend(config.cassette, inner=inner, strict=config.strict,
                         max_in_flight=config.max_in_flight)
