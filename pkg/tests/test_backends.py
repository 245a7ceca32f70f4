from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rir.backends import (
    BackendDescriptor,
    HttpChatBackend,
    RateLimiter,
    RetryPolicy,
    ScriptedBackend,
    build_backend,
    chat,
    entity_probe,
    judge,
    parse_verdict,
)
from rir.capture import Rect, SearchCapture
from rir.errors import (
    AuthError,
    BackendError,
    EmptyField,
    FixtureMiss,
    MalformedResponse,
    ParseError,
    RateLimited,
    UnparseableVerdict,
)
from rir.messages import Condition, MessagePart, PromptBundle, compose_messages
from rir.datasets import VisualQuestion
from PIL import Image


def _bundle(sample_id="s01", tag="RIR", image=None):
    parts = [MessagePart("system", "text", "sys")]
    if image:
        parts.append(MessagePart("user", "image", image))
    parts.append(MessagePart("user", "text", "What is this?"))
    return PromptBundle(parts=tuple(parts), sample_id=sample_id, tag=tag)


# --- descriptors ----------------------------------------------------------------


def test_descriptor_validation():
    with pytest.raises(ParseError):
        BackendDescriptor(id="x", kind="http-chat")
    with pytest.raises(ParseError):
        BackendDescriptor(id="x", kind="scripted")
    with pytest.raises(ParseError):
        BackendDescriptor(id="x", kind="carrier-pigeon")
    with pytest.raises(ParseError):
        RetryPolicy(max_attempts=0)
    with pytest.raises(ParseError):
        RetryPolicy(multiplier=0.5)


@given(
    base=st.floats(min_value=0.001, max_value=10.0),
    mult=st.floats(min_value=1.0, max_value=5.0),
    attempts=st.integers(min_value=1, max_value=8),
)
def test_retry_delays_non_decreasing(base, mult, attempts):
    policy = RetryPolicy(max_attempts=attempts, base_delay=base, multiplier=mult)
    delays = [policy.delay(i) for i in range(1, attempts + 1)]
    assert all(a <= b for a, b in zip(delays, delays[1:]))


# --- scripted backend --------------------------------------------------------------


def test_scripted_lookup(corpus):
    backend = ScriptedBackend(
        BackendDescriptor(id="scripted", kind="scripted",
                          fixture_path=str(corpus.backend_fixture))
    )
    answer = chat(backend, _bundle("s01", "RIR"))
    assert answer.answer_text == "This is Bouzov Castle in the Czech Republic."


def test_scripted_unknown_key_is_fixture_miss(corpus):
    backend = ScriptedBackend(
        BackendDescriptor(id="scripted", kind="scripted",
                          fixture_path=str(corpus.backend_fixture))
    )
    with pytest.raises(FixtureMiss):
        chat(backend, _bundle("s01", "NoSuchCondition"))
    # a fixture miss is a malformed-response-shaped failure to callers
    assert issubclass(FixtureMiss, MalformedResponse)


def test_build_backend_dispatch(corpus):
    scripted = build_backend(
        BackendDescriptor(id="s", kind="scripted",
                          fixture_path=str(corpus.backend_fixture))
    )
    assert isinstance(scripted, ScriptedBackend)
    http = build_backend(
        BackendDescriptor(id="h", kind="http-chat", endpoint_url="http://x",
                          model_name="m", auth_env_var="TOKEN")
    )
    assert isinstance(http, HttpChatBackend)


# --- verdict parsing ----------------------------------------------------------------


def test_parse_verdict_exact_tokens():
    assert parse_verdict("CORRECT") is True
    assert parse_verdict("INCORRECT") is False


def test_parse_verdict_token_scan_in_prose():
    assert parse_verdict(
        "Verdict: CORRECT - the castle is in the Czech Republic"
    ) is True
    assert parse_verdict("That is INCORRECT.") is False


def test_parse_verdict_incorrect_is_not_misread_as_correct():
    # CORRECT appears inside INCORRECT; the word boundary must prevail
    assert parse_verdict("INCORRECT") is False
    assert parse_verdict("strictly INCORRECT here") is False


def test_parse_verdict_unparseable():
    for reply in ("maybe", "correct", "in-correct", ""):
        with pytest.raises(UnparseableVerdict):
            parse_verdict(reply)


def test_verdict_parsing_total_over_fixture_corpus(corpus):
    # every stored judge reply either parses or counts as unparseable, and
    # the two partitions cover the whole judge corpus
    rows = [
        json.loads(line)
        for line in corpus.backend_fixture.read_text().splitlines()
    ]
    judge_rows = [r for r in rows if r["condition"].startswith("judge:")]
    parsed = unparseable = 0
    for row in judge_rows:
        try:
            parse_verdict(row["reply"])
            parsed += 1
        except UnparseableVerdict:
            unparseable += 1
    assert parsed + unparseable == len(judge_rows)
    assert unparseable == 0  # this corpus is fully parseable by construction


def test_judge_with_scripted_fixture(corpus):
    backend = ScriptedBackend(
        BackendDescriptor(id="scripted", kind="scripted",
                          fixture_path=str(corpus.backend_fixture))
    )
    verdict = judge(
        backend,
        "Which country is this facility in?",
        ["Czech Republic"],
        "This is Bouzov Castle in the Czech Republic.",
        sample_id="s01",
        condition="RIR",
    )
    assert verdict.correct is True
    assert verdict.raw_output.startswith("Verdict: CORRECT")
    wrong = judge(backend, "q", ["Paris"], "London", sample_id="s02",
                  condition="Vanilla")
    assert wrong.correct is False


def test_judge_requires_prediction_and_answers(corpus):
    backend = ScriptedBackend(
        BackendDescriptor(id="scripted", kind="scripted",
                          fixture_path=str(corpus.backend_fixture))
    )
    with pytest.raises(EmptyField):
        judge(backend, "q", ["a"], "   ", sample_id="s01", condition="RIR")
    with pytest.raises(EmptyField):
        judge(backend, "q", [], "pred", sample_id="s01", condition="RIR")


def test_entity_probe_uses_probe_tag(corpus):
    backend = ScriptedBackend(
        BackendDescriptor(id="scripted", kind="scripted",
                          fixture_path=str(corpus.backend_fixture))
    )
    capture = SearchCapture(
        image=Image.new("RGB", (4, 4)),
        query_box=Rect(0, 0, 2, 2),
        entries=(),
        provider_id="fixture",
        fetched_at="t",
        content_hash="c",
    )
    assert entity_probe(backend, capture, sample_id="s01") == "Bouzov Castle"


# --- http backend against a local stub ------------------------------------------------


class _Stub(BaseHTTPRequestHandler):
    statuses: list[int] = []
    bodies: list[dict] = []
    auth_headers: list[str] = []
    payload: dict = {"answer_text": "stub answer", "usage": {"total_tokens": 7}}

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        type(self).auth_headers.append(self.headers.get("Authorization", ""))
        type(self).bodies.append(json.loads(self.rfile.read(length)))
        status = type(self).statuses.pop(0) if type(self).statuses else 200
        if status == 200:
            body = json.dumps(type(self).payload).encode()
        else:
            body = b"{}"
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    _Stub.statuses = []
    _Stub.bodies = []
    _Stub.auth_headers = []
    _Stub.payload = {"answer_text": "stub answer", "usage": {"total_tokens": 7}}
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/chat"
    server.shutdown()
    thread.join(timeout=5)


def _http_backend(url, monkeypatch, sleeps, max_attempts=3):
    monkeypatch.setenv("STUB_TOKEN", "sekrit")
    descriptor = BackendDescriptor(
        id="stub",
        kind="http-chat",
        endpoint_url=url,
        model_name="stub-model",
        auth_env_var="STUB_TOKEN",
        retry=RetryPolicy(max_attempts=max_attempts, base_delay=0.01, multiplier=2.0),
    )
    return HttpChatBackend(descriptor, sleep=sleeps.append)


def test_http_two_rate_limits_then_success(stub_server, monkeypatch):
    _Stub.statuses = [429, 429, 200]
    sleeps: list[float] = []
    backend = _http_backend(stub_server, monkeypatch, sleeps)
    answer = chat(backend, _bundle())
    assert answer.answer_text == "stub answer"
    assert answer.usage == {"total_tokens": 7}
    assert len(sleeps) == 2
    assert sleeps[0] <= sleeps[1]  # exponential backoff never shrinks
    assert len(_Stub.bodies) == 3


def test_http_rate_limit_exhaustion_surfaces(stub_server, monkeypatch):
    _Stub.statuses = [429, 429, 429]
    backend = _http_backend(stub_server, monkeypatch, [], max_attempts=3)
    with pytest.raises(RateLimited):
        chat(backend, _bundle())
    assert len(_Stub.bodies) == 3  # total attempts bounded by the policy


def test_http_auth_errors_never_retry(stub_server, monkeypatch):
    _Stub.statuses = [401]
    sleeps: list[float] = []
    backend = _http_backend(stub_server, monkeypatch, sleeps)
    with pytest.raises(AuthError):
        chat(backend, _bundle())
    assert sleeps == []
    assert len(_Stub.bodies) == 1


def test_http_non_retryable_status(stub_server, monkeypatch):
    _Stub.statuses = [418]
    backend = _http_backend(stub_server, monkeypatch, [])
    with pytest.raises(BackendError):
        chat(backend, _bundle())
    assert len(_Stub.bodies) == 1


def test_http_missing_token_is_auth_error(stub_server, monkeypatch):
    monkeypatch.delenv("NOPE_TOKEN", raising=False)
    descriptor = BackendDescriptor(
        id="stub", kind="http-chat", endpoint_url=stub_server,
        model_name="m", auth_env_var="NOPE_TOKEN",
    )
    with pytest.raises(AuthError):
        chat(HttpChatBackend(descriptor), _bundle())


def test_http_malformed_reply(stub_server, monkeypatch):
    _Stub.payload = {"unexpected": "shape"}
    backend = _http_backend(stub_server, monkeypatch, [])
    with pytest.raises(MalformedResponse):
        chat(backend, _bundle())


def test_http_accepts_choices_schema(stub_server, monkeypatch):
    _Stub.payload = {"choices": [{"message": {"content": "from choices"}}]}
    backend = _http_backend(stub_server, monkeypatch, [])
    assert chat(backend, _bundle()).answer_text == "from choices"


def test_http_wire_format(stub_server, monkeypatch, corpus):
    _Stub.statuses = [200]
    backend = _http_backend(stub_server, monkeypatch, [])
    vq = VisualQuestion(id="s01", image=str(corpus.images["s01"]),
                        question="What is it?", answers=("x",), category="food")
    bundle = compose_messages(vq, Condition.VANILLA)
    chat(backend, bundle)
    body = _Stub.bodies[-1]
    assert _Stub.auth_headers[-1] == "Bearer sekrit"
    assert body["model"] == "stub-model"
    assert body["temperature"] == 0.0
    assert body["max_tokens"] == 512
    roles = [m["role"] for m in body["messages"]]
    assert roles == ["system", "user", "user"]
    image_part = body["messages"][1]["content"][0]
    assert image_part["type"] == "image"
    assert image_part["media_type"] == "image/png"
    import base64

    assert base64.b64decode(image_part["data"]) == corpus.images["s01"].read_bytes()
    text_part = body["messages"][2]["content"][0]
    assert text_part == {"type": "text", "text": "What is it?"}


# --- rate limiter ---------------------------------------------------------------------


def test_rate_limiter_blocks_after_burst():
    clock = [0.0]
    sleeps: list[float] = []

    def fake_sleep(seconds):
        sleeps.append(seconds)
        clock[0] += seconds

    limiter = RateLimiter(2.0, clock=lambda: clock[0], sleep=fake_sleep)
    limiter.acquire()
    limiter.acquire()
    assert sleeps == []  # burst capacity covers the first two
    limiter.acquire()
    assert len(sleeps) == 1
    assert sleeps[0] == pytest.approx(30.0)  # 2/min refills one token per 30 s


def test_rate_limiter_disabled():
    limiter = RateLimiter(None, sleep=lambda s: pytest.fail("must not sleep"))
    for _ in range(100):
        limiter.acquire()
