"""One abstraction for every model call: routing, stubbing, output parsing.

Two model roles exist, "general" and "domain"; which hosted model serves
which role is configuration, not code. The ScriptedStub makes the whole
pipeline runnable offline: scripted rules answer fixture prompts, and a
keyword-overlap fallback guarantees a deterministic response for any other
request.

Prompt conventions the stub fallback understands (all produced by the
dialogue module):

- an option block of ``- name: descriptor words`` bullet lines
- a ``Query: ...`` line carrying the user text
- an output contract phrase ``key "xyz"`` naming the JSON key to emit
- an optional ``Current Intent: ...`` line (choice stickiness)
- extraction prompts with ``Pending slot: ...`` and ``User reply: ...``
- question-rephrase prompts with a ``Template: ...`` line
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol

import requests

ROLE_SYSTEM = "system"
ROLE_HUMAN = "human"
ROLE_ASSISTANT = "assistant"

MODEL_GENERAL = "general"
MODEL_DOMAIN = "domain"

DEFAULT_MAX_ATTEMPTS = 3

# Words too common to signal a category/intent choice.
STOPWORDS = frozenset(
    """a an the and or of in on for to with at by from as is are was were be been
    being it its this that these those i me my we our you your he she they them
    his her their do does did done should would could can will shall may might
    must about what when which where who whom why how per please tell give need
    want know help us if then than so not no yes into over under between during
    after before also just some any all each very more most other am""".split()
)


class BackendUnavailable(Exception):
    """Network/timeout failure of a concrete backend; carries its name."""

    def __init__(self, backend_name: str, message: str):
        self.backend_name = backend_name
        super().__init__(f"backend {backend_name!r} unavailable: {message}")


class ParseFailure(Exception):
    pass


class DisallowedValue(Exception):
    def __init__(self, value: str, allowed):
        self.value = value
        super().__init__(f"value {value!r} not among allowed values {sorted(allowed)}")


class ExhaustedRetries(Exception):
    def __init__(self, attempts: int, last_response: str, last_error: Exception):
        self.attempts = attempts
        self.last_response = last_response
        self.last_error = last_error
        super().__init__(
            f"no parseable response after {attempts} attempts: {last_error}"
        )


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in (ROLE_SYSTEM, ROLE_HUMAN, ROLE_ASSISTANT):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in (ROLE_SYSTEM, ROLE_HUMAN) and not self.content:
            raise ValueError(f"{self.role} message content must be nonempty")


@dataclass(frozen=True)
class LlmRequest:
    messages: tuple[ChatMessage, ...]
    max_tokens: int = 256
    temperature: float = 0.0
    model_class: str = MODEL_GENERAL

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.model_class not in (MODEL_GENERAL, MODEL_DOMAIN):
            raise ValueError(f"unknown model_class {self.model_class!r}")

    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)

    def digest(self) -> str:
        body = json.dumps(
            [[m.role, m.content] for m in self.messages], ensure_ascii=False
        )
        return hashlib.sha256(body.encode("utf-8")).hexdigest()[:16]


def request(
    *,
    system: str = "",
    human: str = "",
    model_class: str = MODEL_GENERAL,
    max_tokens: int = 256,
    temperature: float = 0.0,
) -> LlmRequest:
    messages = []
    if system:
        messages.append(ChatMessage(ROLE_SYSTEM, system))
    if human:
        messages.append(ChatMessage(ROLE_HUMAN, human))
    return LlmRequest(
        messages=tuple(messages),
        max_tokens=max_tokens,
        temperature=temperature,
        model_class=model_class,
    )


class LlmBackend(Protocol):
    def complete(self, req: LlmRequest) -> str: ...
    def name(self) -> str: ...


# ---------------------------------------------------------------------------
# Deterministic scripted stub
# ---------------------------------------------------------------------------

_OPTION_LINE = re.compile(r"^\s*-\s*([^:\n]+?)(?::\s*(.*))?$")
_KEY_CONTRACT = re.compile(r'key\s+"([^"]+)"')
_QUERY_LINE = re.compile(r"^Query:\s*(.*)$", re.MULTILINE)
_CURRENT_LINE = re.compile(r"^Current Intent:\s*(.*)$", re.MULTILINE)
_PENDING_LINE = re.compile(r"^Pending slot:\s*(.*)$", re.MULTILINE)
_REPLY_LINE = re.compile(r"^User reply:\s*(.*)$", re.MULTILINE)
_TEMPLATE_LINE = re.compile(r"^Template:\s*(.*)$", re.MULTILINE)

_WORD = re.compile(r"[a-z0-9]+")


def content_words(text: str) -> set[str]:
    return {w for w in _WORD.findall(text.lower()) if w not in STOPWORDS}


def _parse_options(text: str) -> list[tuple[str, str]]:
    options = []
    for line in text.splitlines():
        match = _OPTION_LINE.match(line)
        if match:
            options.append((match.group(1).strip(), (match.group(2) or "").strip()))
    return options


@dataclass
class ScriptedStub:
    """Fully deterministic offline backend.

    ``rules`` is an ordered list of (matcher, canned response); a matcher is
    a substring or a predicate over the full request text. The fallback
    answers classification prompts by maximal content-word overlap between
    the query and each option's name+descriptor (ties keep the earlier
    option; zero overlap answers "unknown"), honors choice stickiness,
    echoes rephrase templates, fills the pending slot on extraction
    prompts, and produces a canned deterministic answer for anything else.
    """

    rules: list[tuple[str | Callable[[str], bool], str]] = field(default_factory=list)
    backend_name: str = "stub"

    def name(self) -> str:
        return self.backend_name

    def complete(self, req: LlmRequest) -> str:
        text = req.text()
        for matcher, response in self.rules:
            if callable(matcher):
                if matcher(text):
                    return response
            elif matcher in text:
                return response
        return self._fallback(text)

    def _fallback(self, text: str) -> str:
        key_match = _KEY_CONTRACT.search(text)
        key = key_match.group(1) if key_match else None

        if key == "slots":
            return self._extraction(text)

        if key == "question":
            template = _TEMPLATE_LINE.search(text)
            question = template.group(1).strip() if template else ""
            return json.dumps({"question": question}, ensure_ascii=False)

        options = _parse_options(text)
        if key and options:
            return json.dumps({key: self._choose(text, options)}, ensure_ascii=False)
        if key:
            return json.dumps({key: ""}, ensure_ascii=False)
        return self._generate(text)

    def _choose(self, text: str, options: list[tuple[str, str]]) -> str:
        queries = _QUERY_LINE.findall(text)
        query_words = content_words(queries[-1]) if queries else set()
        overlaps = {
            name: len(query_words & (content_words(name) | content_words(desc)))
            for name, desc in options
        }
        names = [name for name, _ in options]
        best = max(names, key=lambda n: overlaps[n])  # max is stable: first wins ties
        current_match = _CURRENT_LINE.search(text)
        if current_match:
            current = current_match.group(1).strip()
            if current in overlaps and overlaps[best] <= overlaps[current]:
                return current
        if overlaps[best] == 0:
            return "unknown"
        return best

    def _extraction(self, text: str) -> str:
        pending = _PENDING_LINE.search(text)
        reply = _REPLY_LINE.search(text)
        slots: dict[str, str] = {}
        if pending and reply:
            slot_id = pending.group(1).strip()
            value = reply.group(1).strip()
            if slot_id and slot_id != "none" and value:
                slots[slot_id] = value
        return json.dumps({"slots": slots}, ensure_ascii=False)

    def _generate(self, text: str) -> str:
        queries = [q for q in _QUERY_LINE.findall(text) if q.strip()]
        if queries:
            topic = queries[-1].strip()
            return (
                f"Here is guidance on your question: {topic} "
                "Follow the recommended practice for your crop and region, and "
                "consult the local agriculture office for dosages and timings."
            )
        return (
            "Thank you for reaching out. Ask me about your crop and I will help "
            "with variety choice, schedules, and field practices."
        )


# ---------------------------------------------------------------------------
# HTTP backend (chat-completions wire format, version-pinned in docs)
# ---------------------------------------------------------------------------

class HttpChatBackend:
    """POSTs the request to a chat-completions endpoint.

    Body: {"model", "messages": [{"role", "content"}], "max_tokens",
    "temperature"}; the ``human`` role maps to ``user`` on the wire.
    Expects {"choices": [{"message": {"content": ...}}]}.
    """

    def __init__(self, url: str, api_key: str = "", timeout_s: float = 30.0,
                 model: str = "default", backend_name: str = "http"):
        self.url = url
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.model = model
        self.backend_name = backend_name

    def name(self) -> str:
        return self.backend_name

    def complete(self, req: LlmRequest) -> str:
        wire_messages = [
            {"role": "user" if m.role == ROLE_HUMAN else m.role, "content": m.content}
            for m in req.messages
        ]
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(
                self.url,
                json={
                    "model": self.model,
                    "messages": wire_messages,
                    "max_tokens": req.max_tokens,
                    "temperature": req.temperature,
                },
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            return str(resp.json()["choices"][0]["message"]["content"])
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailable(self.backend_name, str(exc)) from exc


# ---------------------------------------------------------------------------
# Router + audit log
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditRecord:
    timestamp: float
    model_class: str
    request_digest: str
    response: str
    latency_ms: float


class AuditLog:
    """Append-only request/response log; appends are serialized."""

    def __init__(self, path: str | Path | None = None):
        self._records: list[AuditRecord] = []
        self._path = Path(path) if path else None
        self._lock = threading.Lock()

    def append(self, record: AuditRecord) -> None:
        with self._lock:
            self._records.append(record)
            if self._path:
                with self._path.open("a", encoding="utf-8") as out:
                    out.write(
                        json.dumps(
                            {
                                "timestamp": record.timestamp,
                                "model_class": record.model_class,
                                "request_digest": record.request_digest,
                                "response": record.response,
                                "latency_ms": record.latency_ms,
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )

    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


class ModelRouter:
    """Routes domain-class requests to the domain backend, the rest to general."""

    def __init__(
        self,
        general_backend: LlmBackend,
        domain_backend: LlmBackend,
        audit: AuditLog | None = None,
    ):
        self.general_backend = general_backend
        self.domain_backend = domain_backend
        self.audit = audit if audit is not None else AuditLog()

    def backend_for(self, model_class: str) -> LlmBackend:
        return self.domain_backend if model_class == MODEL_DOMAIN else self.general_backend

    def complete(self, req: LlmRequest) -> str:
        backend = self.backend_for(req.model_class)
        start = time.perf_counter()
        response = backend.complete(req)
        latency_ms = (time.perf_counter() - start) * 1000.0
        self.audit.append(
            AuditRecord(
                timestamp=time.time(),
                model_class=req.model_class,
                request_digest=req.digest(),
                response=response,
                latency_ms=latency_ms,
            )
        )
        return response


def complete(router: ModelRouter, req: LlmRequest) -> str:
    return router.complete(req)


# ---------------------------------------------------------------------------
# Structured-output parsing
# ---------------------------------------------------------------------------

def parse_single_key(
    response: str, key: str, allowed: Optional[list[str]] = None
) -> str:
    """Extract ``key`` from the first parseable JSON object in a response.

    Models wrap their output in prose and code fences, so this scans for
    object candidates rather than parsing the whole string; objects missing
    the key are skipped in favor of a later object that has it.
    """
    if not key:
        raise ValueError("key must be nonempty")
    decoder = json.JSONDecoder()
    found_object = False
    for pos, ch in enumerate(response):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(response, pos)
        except ValueError:
            continue
        if not isinstance(obj, dict):
            continue
        found_object = True
        if key not in obj:
            continue
        value = obj[key]
        if not isinstance(value, str):
            raise ParseFailure(f"value of {key!r} is not a string: {value!r}")
        if allowed is not None and value not in allowed:
            raise DisallowedValue(value, allowed)
        return value
    if found_object:
        raise ParseFailure(f"no JSON object with key {key!r} in response")
    raise ParseFailure("no JSON object found in response")


def parse_slot_map(response: str) -> dict[str, str]:
    """Extract the {"slots": {...}} mapping from a response."""
    decoder = json.JSONDecoder()
    for pos, ch in enumerate(response):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(response, pos)
        except ValueError:
            continue
        if isinstance(obj, dict) and isinstance(obj.get("slots"), dict):
            return {
                str(k): str(v)
                for k, v in obj["slots"].items()
                if isinstance(v, (str, int, float)) and str(v).strip()
            }
    raise ParseFailure('no JSON object with key "slots" in response')


_CORRECTIVE = (
    "Your previous reply could not be used. Follow the output instructions "
    "exactly: output only the JSON blob described above, with no preamble "
    "or explanation."
)


def complete_with_retry(
    router: ModelRouter,
    req: LlmRequest,
    parser: Callable[[str], object],
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    corrective: str = _CORRECTIVE,
):
    """Re-issue a request with a corrective system line until it parses."""
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    attempt_req = req
    last_response = ""
    last_error: Exception = ParseFailure("not attempted")
    for _ in range(max_attempts):
        last_response = router.complete(attempt_req)
        try:
            return parser(last_response)
        except (ParseFailure, DisallowedValue) as exc:
            last_error = exc
            attempt_req = replace(
                attempt_req,
                messages=attempt_req.messages + (ChatMessage(ROLE_SYSTEM, corrective),),
            )
    raise ExhaustedRetries(max_attempts, last_response, last_error)


# ---------------------------------------------------------------------------
# Environment wiring
# ---------------------------------------------------------------------------

ENV_BACKEND_MODE = "BACKEND_MODE"
ENV_GENERAL_URL = "GENERAL_LLM_URL"
ENV_DOMAIN_URL = "DOMAIN_LLM_URL"
ENV_API_KEY = "LLM_API_KEY"
ENV_TIMEOUT_MS = "LLM_TIMEOUT_MS"


def router_from_env(env: dict[str, str], audit: AuditLog | None = None) -> ModelRouter:
    """Build a router per BACKEND_MODE (stub default; http needs both URLs)."""
    mode = env.get(ENV_BACKEND_MODE, "stub").lower()
    if mode == "stub":
        stub = ScriptedStub()
        return ModelRouter(stub, stub, audit=audit)
    if mode != "http":
        raise ValueError(f"unknown {ENV_BACKEND_MODE} {mode!r} (expected http or stub)")
    timeout_s = float(env.get(ENV_TIMEOUT_MS, "30000")) / 1000.0
    api_key = env.get(ENV_API_KEY, "")
    general_url = env.get(ENV_GENERAL_URL)
    domain_url = env.get(ENV_DOMAIN_URL)
    if not general_url or not domain_url:
        raise ValueError(
            f"http mode requires {ENV_GENERAL_URL} and {ENV_DOMAIN_URL}"
        )
    return ModelRouter(
        HttpChatBackend(general_url, api_key, timeout_s, backend_name="general-http"),
        HttpChatBackend(domain_url, api_key, timeout_s, backend_name="domain-http"),
        audit=audit,
    )
