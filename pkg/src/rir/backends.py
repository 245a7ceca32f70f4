"""Chat-endpoint clients, answer judging, and the entity-recall probe.

Backends are vendor-neutral: an ``http-chat`` backend posts a JSON body of
``{model, temperature, max_tokens, messages:[{role, content:[...]}]}`` with
inline base64 images and a bearer token from a named environment variable,
while a ``scripted`` backend replays replies from a JSONL fixture keyed by
``(sample_id, condition)``.  Nothing downstream depends on which kind
produced an answer.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .errors import (
    AuthError,
    BackendError,
    EmptyField,
    FixtureMiss,
    MalformedResponse,
    ParseError,
    RateLimited,
    UnparseableVerdict,
)
from .messages import SYSTEM_PROMPT, MessagePart, PromptBundle, probe_bundle

logger = logging.getLogger(__name__)

#: Fixed grading instruction; the full prompt sent to the judge is the
#: system sentence followed by the filled user template, space-joined.
JUDGE_SYSTEM = "You are grading a visual question answering response."
JUDGE_USER_TEMPLATE = (
    "Question: {question}. Ground truth answer(s): {answers}. "
    "Model response: {prediction}. Reply with exactly CORRECT if the "
    "response conveys a ground-truth answer, otherwise exactly INCORRECT."
)

_VERDICT_RE = re.compile(r"\b(CORRECT|INCORRECT)\b")

_MEDIA_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg",
                ".gif": "image/gif", ".webp": "image/webp"}


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    multiplier: float = 2.0
    retryable_statuses: frozenset[int] = frozenset({429, 500, 502, 503, 504})

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ParseError("max_attempts must be >= 1")
        if self.multiplier < 1:
            raise ParseError("multiplier must be >= 1")

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based); non-decreasing."""
        return self.base_delay * self.multiplier ** (attempt - 1)


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    kind: str  # "http-chat" | "scripted"
    endpoint_url: str | None = None
    model_name: str | None = None
    auth_env_var: str | None = None
    fixture_path: str | None = None
    temperature: float = 0.0
    max_tokens: int = 512
    retry: RetryPolicy = RetryPolicy()
    rate_limit_per_minute: float | None = None
    request_timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.kind == "http-chat":
            missing = [
                name
                for name, value in (
                    ("endpoint_url", self.endpoint_url),
                    ("model_name", self.model_name),
                    ("auth_env_var", self.auth_env_var),
                )
                if not value
            ]
            if missing:
                raise ParseError(f"backend {self.id!r} missing {', '.join(missing)}")
        elif self.kind == "scripted":
            if not self.fixture_path:
                raise ParseError(f"backend {self.id!r} needs fixture_path")
        else:
            raise ParseError(f"backend {self.id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class ModelAnswer:
    answer_text: str
    usage: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class JudgeVerdict:
    correct: bool
    raw_output: str


class RateLimiter:
    """Token bucket shared across worker threads; None disables limiting."""

    def __init__(self, per_minute: float | None, clock=time.monotonic, sleep=time.sleep):
        self.per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._tokens = per_minute if per_minute else 0.0
        self._last = clock()

    def acquire(self) -> None:
        if not self.per_minute:
            return
        rate = self.per_minute / 60.0
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(
                    self.per_minute, self._tokens + (now - self._last) * rate
                )
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / rate
            self._sleep(wait)


class Backend(Protocol):
    descriptor: BackendDescriptor

    def complete(self, bundle: PromptBundle) -> ModelAnswer:
        ...


class ScriptedBackend:
    """Replays fixture replies; the deterministic stand-in for a live model.

    Fixture rows are JSONL objects ``{"sample_id": ..., "condition": ...,
    "reply": ...}`` and are looked up by the bundle's ``(sample_id, tag)``.
    """

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        assert descriptor.fixture_path is not None
        path = Path(descriptor.fixture_path)
        self._replies: dict[tuple[str, str], str] = {}
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ParseError(f"cannot read fixture {path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                key = (str(row["sample_id"]), str(row["condition"]))
                self._replies[key] = str(row["reply"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"{path}:{lineno}: bad fixture row: {exc}") from exc

    def complete(self, bundle: PromptBundle) -> ModelAnswer:
        key = (bundle.sample_id or "", bundle.tag or "")
        try:
            return ModelAnswer(answer_text=self._replies[key])
        except KeyError:
            raise FixtureMiss(f"no scripted reply for {key}") from None


def _encode_image(ref: str) -> dict:
    path = Path(ref)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise BackendError(f"cannot read image part {ref}: {exc}") from exc
    media = _MEDIA_TYPES.get(path.suffix.lower(), "image/png")
    return {
        "type": "image",
        "media_type": media,
        "data": base64.b64encode(data).decode("ascii"),
    }


def _wire_messages(parts: Sequence[MessagePart]) -> list[dict]:
    messages = []
    for part in parts:
        if part.kind == "text":
            content = {"type": "text", "text": part.body}
        else:
            content = _encode_image(part.body)
        messages.append({"role": part.role, "content": [content]})
    return messages


class HttpChatBackend:
    """Posts bundles to a chat endpoint with retry-on-status and backoff."""

    def __init__(self, descriptor: BackendDescriptor, session=None, sleep=time.sleep,
                 rate_limiter: RateLimiter | None = None):
        self.descriptor = descriptor
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._sleep = sleep
        self._limiter = rate_limiter or RateLimiter(descriptor.rate_limit_per_minute)

    def _auth_header(self) -> dict[str, str]:
        assert self.descriptor.auth_env_var is not None
        token = os.environ.get(self.descriptor.auth_env_var)
        if not token:
            raise AuthError(
                f"environment variable {self.descriptor.auth_env_var} is not set"
            )
        return {"Authorization": f"Bearer {token}"}

    def complete(self, bundle: PromptBundle) -> ModelAnswer:
        payload = {
            "model": self.descriptor.model_name,
            "temperature": self.descriptor.temperature,
            "max_tokens": self.descriptor.max_tokens,
            "messages": _wire_messages(bundle.parts),
        }
        headers = self._auth_header()
        policy = self.descriptor.retry
        last_status: int | None = None
        for attempt in range(1, policy.max_attempts + 1):
            self._limiter.acquire()
            try:
                resp = self._session.post(
                    self.descriptor.endpoint_url,
                    json=payload,
                    headers=headers,
                    timeout=self.descriptor.request_timeout,
                )
            except Exception as exc:
                raise BackendError(f"request failed: {exc}") from exc
            if resp.status_code == 200:
                return _parse_answer(resp)
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code} from {self.descriptor.id}")
            last_status = resp.status_code
            if resp.status_code not in policy.retryable_statuses:
                raise BackendError(f"HTTP {resp.status_code} from {self.descriptor.id}")
            if attempt < policy.max_attempts:
                self._sleep(policy.delay(attempt))
        if last_status == 429:
            raise RateLimited(f"still rate-limited after {policy.max_attempts} attempts")
        raise BackendError(
            f"HTTP {last_status} persisted through {policy.max_attempts} attempts"
        )


def _parse_answer(resp) -> ModelAnswer:
    try:
        data = resp.json()
    except ValueError as exc:
        raise MalformedResponse(f"non-JSON reply: {exc}") from exc
    text = data.get("answer_text")
    if text is None:
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse(f"no answer field in reply: {str(data)[:200]}") from None
    usage = data.get("usage") or {}
    if not isinstance(usage, dict):
        usage = {}
    return ModelAnswer(answer_text=str(text), usage=usage)


def build_backend(descriptor: BackendDescriptor, **kwargs) -> Backend:
    if descriptor.kind == "scripted":
        return ScriptedBackend(descriptor)
    return HttpChatBackend(descriptor, **kwargs)


def chat(backend: Backend, bundle: PromptBundle) -> ModelAnswer:
    """Send a bundle to a backend and return its answer."""
    return backend.complete(bundle)


def parse_verdict(reply: str) -> bool:
    """First whole-word CORRECT/INCORRECT token decides; neither is an error."""
    match = _VERDICT_RE.search(reply)
    if match is None:
        raise UnparseableVerdict(f"no verdict token in {reply[:120]!r}")
    return match.group(1) == "CORRECT"


def judge(
    judge_backend: Backend,
    question: str,
    answers: Sequence[str],
    prediction: str,
    *,
    sample_id: str | None = None,
    condition: str | None = None,
) -> JudgeVerdict:
    """Grade a prediction against the ground-truth answers.

    ``sample_id``/``condition`` only key scripted judge fixtures (as
    ``(sample_id, "judge:<condition>")``); live judges ignore them.
    """
    if not prediction.strip():
        raise EmptyField("prediction is blank")
    if not answers:
        raise EmptyField("answers must be non-empty")
    user_text = JUDGE_USER_TEMPLATE.format(
        question=question,
        answers="; ".join(answers),
        prediction=prediction,
    )
    bundle = PromptBundle(
        parts=(
            MessagePart("system", "text", JUDGE_SYSTEM),
            MessagePart("user", "text", user_text),
        ),
        sample_id=sample_id,
        tag=f"judge:{condition}" if condition else "judge",
    )
    reply = chat(judge_backend, bundle).answer_text
    return JudgeVerdict(correct=parse_verdict(reply), raw_output=reply)


def entity_probe(backend: Backend, capture, *, sample_id: str | None = None,
                 system_prompt: str | None = None) -> str:
    """Ask the backend to name the entity shown in a capture; returns the raw
    reply.  Matching against ground truth happens in :mod:`rir.metrics`."""
    bundle = probe_bundle(
        capture, sample_id=sample_id, system_prompt=system_prompt or SYSTEM_PROMPT
    )
    return chat(backend, bundle).answer_text
