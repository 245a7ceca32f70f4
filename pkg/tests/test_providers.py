from __future__ import annotations

import base64
import hashlib
import io
import json
import socket
import struct
import threading

import pytest
from PIL import Image

from rir.capture import SearchResultEntry
from rir.errors import NavigationFailure, ParseError, ProviderTimeout, UnknownImage
from rir.providers import (
    CaptureCache,
    DevtoolsSocket,
    FixtureSearchProvider,
    LiveProviderSettings,
    LiveSearchProvider,
    search,
)

# --- fixture provider --------------------------------------------------------------


def test_fixture_provider_returns_manifest_order(corpus):
    provider = FixtureSearchProvider(corpus.provider_manifest)
    entries = search(provider, corpus.images["s01"], 8)
    assert len(entries) == 8
    assert [e.source_domain for e in entries] == [
        f"example{i}.org" for i in range(8)
    ]
    assert entries[0].title.startswith("Bouzov Castle result 0")


def test_fixture_provider_truncates_by_rank(corpus):
    provider = FixtureSearchProvider(corpus.provider_manifest)
    entries = search(provider, corpus.images["s01"], 3)
    assert [e.source_domain for e in entries] == [
        "example0.org", "example1.org", "example2.org",
    ]


def test_fixture_provider_unknown_image(corpus):
    provider = FixtureSearchProvider(corpus.provider_manifest)
    with pytest.raises(UnknownImage):
        search(provider, corpus.unmapped_image, 8)


def test_fixture_provider_k_validation(corpus):
    provider = FixtureSearchProvider(corpus.provider_manifest)
    with pytest.raises(ValueError):
        search(provider, corpus.images["s01"], 0)


def test_fixture_provider_missing_thumbnail_fails_at_load(corpus, tmp_path):
    manifest = tmp_path / "broken_manifest.jsonl"
    manifest.write_text(json.dumps({
        "image_sha256": "ff" * 32,
        "entries": [{"title": "t", "source_domain": "d",
                     "thumbnail_path": "does_not_exist.png"}],
    }) + "\n", encoding="utf-8")
    with pytest.raises(ParseError, match="thumbnail missing"):
        FixtureSearchProvider(manifest)


def test_fixture_search_is_pure(corpus):
    provider = FixtureSearchProvider(corpus.provider_manifest)
    first = search(provider, corpus.images["s02"], 5)
    second = search(provider, corpus.images["s02"], 5)
    assert first == second


# --- capture cache -------------------------------------------------------------------


def _tiny_png(color) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (8, 6), color).save(buf, format="PNG")
    return buf.getvalue()


def test_capture_cache_round_trip_byte_for_byte(tmp_path):
    cache = CaptureCache(tmp_path / "cache")
    thumbs = [_tiny_png((200, 0, 0)), _tiny_png((0, 200, 0))]
    entries = [
        SearchResultEntry(title="first", source_domain="a.org", thumbnail=""),
        SearchResultEntry(title="second", source_domain="b.org", thumbnail=""),
    ]
    stored = cache.put("h" * 64, entries, thumbs, raw_screenshot=b"rawpng")
    loaded = cache.get("h" * 64)
    assert loaded == stored
    for entry, original in zip(loaded, thumbs):
        assert open(entry.thumbnail, "rb").read() == original
    assert (tmp_path / "cache" / ("h" * 64 + ".raw.png")).read_bytes() == b"rawpng"
    # atomic publication leaves no temp droppings
    assert not list((tmp_path / "cache").glob("*.tmp"))


def test_capture_cache_miss_is_none(tmp_path):
    cache = CaptureCache(tmp_path / "cache")
    assert cache.get("0" * 64) is None


# --- live provider over a scripted transport ---------------------------------------


class FakeTransport:
    """Replays canned DevTools responses; optionally fails navigations."""

    def __init__(self, rows=None, fail_navigation=False, results_ready=True,
                 upload_input=True, consent_present=True):
        self.rows = rows if rows is not None else []
        self.fail_navigation = fail_navigation
        self.results_ready = results_ready
        self.upload_input = upload_input
        self.consent_present = consent_present
        self.consent_clicks = 0
        self.uploaded_files = []
        self.calls = []
        self.closed = False

    def command(self, method, params=None):
        self.calls.append(method)
        if method == "Page.navigate":
            if self.fail_navigation:
                raise NavigationFailure("scripted navigation failure")
            return {}
        if method == "DOM.getDocument":
            return {"root": {"nodeId": 1}}
        if method == "DOM.querySelector":
            return {"nodeId": 42 if self.upload_input else 0}
        if method == "DOM.setFileInputFiles":
            self.uploaded_files.append(params["files"])
            return {}
        if method == "Page.captureScreenshot":
            return {"data": base64.b64encode(_tiny_png((1, 2, 3))).decode()}
        if method == "Runtime.evaluate":
            expr = params["expression"]
            if "btn.click" in expr:
                clicked = self.consent_present and self.consent_clicks == 0
                self.consent_clicks += clicked
                return {"result": {"value": clicked}}
            if "toDataURL" in expr:
                return {"result": {"value": json.dumps(self.rows)}}
            if "readyState" in expr:
                return {"result": {"value": True}}
            if "querySelectorAll" in expr:
                return {"result": {"value": self.results_ready}}
            return {"result": {"value": None}}
        return {}

    def close(self):
        self.closed = True


def _rows(n):
    return [
        {
            "title": f"hit {i}",
            "domain": f"site{i}.org",
            "thumb": "data:image/png;base64,"
                     + base64.b64encode(_tiny_png((i * 20, 10, 10))).decode(),
        }
        for i in range(n)
    ]


def _provider(transports, tmp_path, retries=2, cache=True):
    queue = list(transports)
    settings = LiveProviderSettings(nav_timeout=5.0, retries=retries,
                                    poll_interval=0.0)
    return LiveSearchProvider(
        settings,
        cache=CaptureCache(tmp_path / "cache") if cache else None,
        transport_factory=lambda: queue.pop(0),
        sleep=lambda s: None,
    )


def test_live_provider_extracts_and_caches(corpus, tmp_path):
    transport = FakeTransport(rows=_rows(3))
    provider = _provider([transport], tmp_path)
    entries = provider.search(corpus.images["s01"], 8)
    assert [e.title for e in entries] == ["hit 0", "hit 1", "hit 2"]
    assert transport.consent_clicks == 1
    assert transport.uploaded_files and transport.uploaded_files[0][0].endswith("s01.png")
    digest = hashlib.sha256(corpus.images["s01"].read_bytes()).hexdigest()
    assert (tmp_path / "cache" / f"{digest}.raw.png").exists()
    # a repeat query is answered from the cache without touching the browser
    calls_before = len(transport.calls)
    again = provider.search(corpus.images["s01"], 2)
    assert [e.title for e in again] == ["hit 0", "hit 1"]
    assert len(transport.calls) == calls_before


def test_live_provider_retries_then_succeeds(corpus, tmp_path):
    transports = [
        FakeTransport(fail_navigation=True),
        FakeTransport(fail_navigation=True),
        FakeTransport(rows=_rows(2)),
    ]
    provider = _provider(transports, tmp_path, retries=2)
    entries = provider.search(corpus.images["s02"], 8)
    assert len(entries) == 2
    assert transports[0].closed and transports[1].closed


def test_live_provider_exhausts_retries(corpus, tmp_path):
    transports = [FakeTransport(fail_navigation=True) for _ in range(2)]
    provider = _provider(transports, tmp_path, retries=1, cache=False)
    with pytest.raises(NavigationFailure):
        provider.search(corpus.images["s03"], 8)


def test_live_provider_missing_upload_input(corpus, tmp_path):
    transports = [FakeTransport(upload_input=False) for _ in range(3)]
    provider = _provider(transports, tmp_path, retries=2, cache=False)
    with pytest.raises(NavigationFailure, match="upload input"):
        provider.search(corpus.images["s04"], 8)


def test_live_provider_timeout(corpus, tmp_path):
    class NeverReady(FakeTransport):
        def command(self, method, params=None):
            if method == "Runtime.evaluate" and "readyState" in params["expression"]:
                return {"result": {"value": False}}
            return super().command(method, params)

    ticks = iter(range(0, 10_000, 3))  # each poll advances the clock 3 s
    settings = LiveProviderSettings(nav_timeout=5.0, retries=0, poll_interval=0.0)
    provider = LiveSearchProvider(
        settings,
        transport_factory=lambda: NeverReady(),
        sleep=lambda s: None,
        clock=lambda: float(next(ticks)),
    )
    with pytest.raises(ProviderTimeout):
        provider.search(corpus.images["s05"], 8)


def test_live_provider_reuses_pooled_session(corpus, tmp_path):
    transport = FakeTransport(rows=_rows(1))
    created = []

    def factory():
        created.append(True)
        return transport

    settings = LiveProviderSettings(retries=0, poll_interval=0.0, pool_size=1)
    provider = LiveSearchProvider(settings, transport_factory=factory,
                                  sleep=lambda s: None)
    provider.search(corpus.images["s06"], 4)
    provider.search(corpus.images["s07"], 4)
    assert len(created) == 1
    provider.close()
    assert transport.closed


# --- websocket transport against a local server --------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _ws_accept(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _read_exact(conn, n):
    data = b""
    while len(data) < n:
        chunk = conn.recv(n - len(data))
        if not chunk:
            raise ConnectionError("client hung up")
        data += chunk
    return data


def _serve_one_command(server_sock, replies):
    conn, _ = server_sock.accept()
    request = b""
    while b"\r\n\r\n" not in request:
        request += conn.recv(4096)
    key = next(
        line.split(b":", 1)[1].strip()
        for line in request.split(b"\r\n")
        if line.lower().startswith(b"sec-websocket-key")
    )
    conn.sendall(
        b"HTTP/1.1 101 Switching Protocols\r\n"
        b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
        b"Sec-WebSocket-Accept: " + _ws_accept(key.decode()).encode() + b"\r\n\r\n"
    )
    for reply in replies:
        header = _read_exact(conn, 2)
        length = header[1] & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", _read_exact(conn, 2))
        mask = _read_exact(conn, 4)
        payload = bytes(
            b ^ mask[i % 4] for i, b in enumerate(_read_exact(conn, length))
        )
        request_obj = json.loads(payload)
        body = json.dumps({"id": request_obj["id"], "result": reply}).encode()
        conn.sendall(b"\x81" + bytes([len(body)]) + body)
    conn.close()


def test_devtools_socket_command_round_trip():
    server = socket.socket()
    server.bind(("127.0.0.1", 0))
    server.listen(1)
    port = server.getsockname()[1]
    thread = threading.Thread(
        target=_serve_one_command, args=(server, [{"ok": 1}, {"ok": 2}]),
        daemon=True,
    )
    thread.start()
    transport = DevtoolsSocket(f"ws://127.0.0.1:{port}/devtools/page/1", timeout=5.0)
    assert transport.command("Page.enable") == {"ok": 1}
    assert transport.command("Page.navigate", {"url": "about:blank"}) == {"ok": 2}
    transport.close()
    thread.join(timeout=5)
    server.close()
