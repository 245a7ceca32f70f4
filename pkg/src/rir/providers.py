"""Reverse-image-search providers.

Two implementations of one contract: ``FixtureSearchProvider`` answers from a
local JSONL manifest keyed by the query image's SHA-256 (deterministic, used
by every test), and ``LiveSearchProvider`` drives a headless Chromium through
the DevTools wire protocol.  Both return plain ``SearchResultEntry`` lists;
canvas composition happens separately in :mod:`rir.capture`.

Fixture manifest format, one JSON object per line:

    {"image_sha256": ..., "entries": [{"title": ..., "source_domain": ...,
                                       "thumbnail_path": ...}, ...]}

Thumbnail paths are relative to the manifest file; missing files fail at
load time, not at query time.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import queue
import socket
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .capture import SearchResultEntry, hash_image_ref
from .errors import (
    NavigationFailure,
    ParseError,
    ProviderError,
    ProviderTimeout,
    UnknownImage,
)

logger = logging.getLogger(__name__)


class SearchProvider(Protocol):
    provider_id: str

    def search(self, query_image: str | Path, k: int) -> list[SearchResultEntry]:
        ...


def search(provider: SearchProvider, query_image: str | Path, k: int) -> list[SearchResultEntry]:
    """Top-``k`` reverse-image-search hits for an image, in provider rank order.

    May legitimately return fewer than ``k`` entries, including none.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    return provider.search(query_image, k)


class FixtureSearchProvider:
    """Deterministic provider backed by a JSONL manifest of canned results."""

    provider_id = "fixture"

    def __init__(self, manifest_path: str | Path):
        manifest_path = Path(manifest_path)
        base = manifest_path.parent
        self._rows: dict[str, list[SearchResultEntry]] = {}
        try:
            lines = manifest_path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ParseError(f"cannot read provider manifest {manifest_path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                image_hash = row["image_sha256"]
                entries = []
                for e in row["entries"]:
                    thumb = base / e["thumbnail_path"]
                    if not thumb.exists():
                        raise ParseError(
                            f"{manifest_path}:{lineno}: thumbnail missing: {thumb}"
                        )
                    entries.append(
                        SearchResultEntry(
                            title=str(e["title"]),
                            source_domain=str(e["source_domain"]),
                            thumbnail=str(thumb),
                        )
                    )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{manifest_path}:{lineno}: bad row: {exc}") from exc
            self._rows[image_hash] = entries

    def search(self, query_image: str | Path, k: int) -> list[SearchResultEntry]:
        image_hash = hash_image_ref(query_image)
        if image_hash not in self._rows:
            raise UnknownImage(f"no manifest row for image hash {image_hash[:12]}...")
        return self._rows[image_hash][:k]


# --- capture cache -------------------------------------------------------------


class CaptureCache:
    """On-disk cache of live search results, keyed by query-image hash.

    Stores the entry list plus thumbnail bytes so repeat queries replay the
    original results byte-for-byte.  Writes go to a temp file first and are
    published with an atomic rename.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _entries_path(self, content_hash: str) -> Path:
        return self.root / f"{content_hash}.entries.json"

    def get(self, content_hash: str) -> list[SearchResultEntry] | None:
        path = self._entries_path(content_hash)
        if not path.exists():
            return None
        rows = json.loads(path.read_text(encoding="utf-8"))
        return [
            SearchResultEntry(
                title=r["title"],
                source_domain=r["source_domain"],
                thumbnail=r["thumbnail"],
            )
            for r in rows
        ]

    def put(
        self,
        content_hash: str,
        entries: Sequence[SearchResultEntry],
        thumbnails: Sequence[bytes],
        raw_screenshot: bytes | None = None,
    ) -> list[SearchResultEntry]:
        """Persist entries, rewriting thumbnails to cache-local files."""
        stored: list[SearchResultEntry] = []
        for i, (entry, data) in enumerate(zip(entries, thumbnails)):
            thumb_path = self.root / f"{content_hash}.{i}.png"
            self._atomic_write(thumb_path, data)
            stored.append(
                SearchResultEntry(
                    title=entry.title,
                    source_domain=entry.source_domain,
                    thumbnail=str(thumb_path),
                )
            )
        if raw_screenshot is not None:
            self._atomic_write(self.root / f"{content_hash}.raw.png", raw_screenshot)
        payload = json.dumps(
            [
                {"title": e.title, "source_domain": e.source_domain, "thumbnail": e.thumbnail}
                for e in stored
            ],
            ensure_ascii=False,
        ).encode("utf-8")
        self._atomic_write(self._entries_path(content_hash), payload)
        return stored

    def _atomic_write(self, path: Path, data: bytes) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)


# --- DevTools transport ----------------------------------------------------------


class CdpTransport(Protocol):
    """Minimal command interface onto one DevTools page session."""

    def command(self, method: str, params: dict | None = None) -> dict:
        ...

    def close(self) -> None:
        ...


class DevtoolsSocket:
    """Blocking WebSocket client for a DevTools endpoint, on the stdlib only.

    Speaks just enough RFC 6455 for CDP: text frames, client masking, and
    close.  Events arriving between command replies are discarded.
    """

    def __init__(self, ws_url: str, timeout: float = 30.0):
        # ws://host:port/path
        rest = ws_url.split("://", 1)[1]
        hostport, _, path = rest.partition("/")
        host, _, port = hostport.partition(":")
        self._sock = socket.create_connection((host, int(port or 80)), timeout=timeout)
        key = base64.b64encode(os.urandom(16)).decode()
        handshake = (
            f"GET /{path} HTTP/1.1\r\n"
            f"Host: {hostport}\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\n"
            "Sec-WebSocket-Version: 13\r\n\r\n"
        )
        self._sock.sendall(handshake.encode())
        status = self._read_until(b"\r\n\r\n")
        if b" 101 " not in status.split(b"\r\n", 1)[0]:
            raise NavigationFailure(f"websocket handshake rejected: {status[:80]!r}")
        self._next_id = 1

    def command(self, method: str, params: dict | None = None) -> dict:
        msg_id = self._next_id
        self._next_id += 1
        self._send_text(json.dumps({"id": msg_id, "method": method, "params": params or {}}))
        while True:
            reply = json.loads(self._recv_text())
            if reply.get("id") == msg_id:
                if "error" in reply:
                    raise NavigationFailure(f"{method}: {reply['error']}")
                return reply.get("result", {})
            # interleaved event; CDP events are not consumed by this client

    def close(self) -> None:
        try:
            self._sock.sendall(b"\x88\x80" + os.urandom(4))
        except OSError:
            pass
        self._sock.close()

    def _read_until(self, marker: bytes) -> bytes:
        data = b""
        while marker not in data:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise NavigationFailure("websocket closed during handshake")
            data += chunk
        return data

    def _recv_exact(self, n: int) -> bytes:
        data = b""
        while len(data) < n:
            chunk = self._sock.recv(n - len(data))
            if not chunk:
                raise NavigationFailure("websocket closed mid-frame")
            data += chunk
        return data

    def _send_text(self, text: str) -> None:
        payload = text.encode("utf-8")
        header = b"\x81"  # FIN + text opcode
        n = len(payload)
        if n < 126:
            header += bytes([0x80 | n])
        elif n < 1 << 16:
            header += bytes([0x80 | 126]) + struct.pack(">H", n)
        else:
            header += bytes([0x80 | 127]) + struct.pack(">Q", n)
        mask = os.urandom(4)
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        self._sock.sendall(header + mask + masked)

    def _recv_text(self) -> str:
        buf = b""
        while True:
            b0, b1 = self._recv_exact(2)
            fin = b0 & 0x80
            opcode = b0 & 0x0F
            n = b1 & 0x7F
            if n == 126:
                (n,) = struct.unpack(">H", self._recv_exact(2))
            elif n == 127:
                (n,) = struct.unpack(">Q", self._recv_exact(8))
            payload = self._recv_exact(n) if n else b""
            if opcode == 0x9:  # ping -> pong
                self._sock.sendall(b"\x8a\x80" + os.urandom(4))
                continue
            if opcode == 0x8:
                raise NavigationFailure("websocket closed by peer")
            buf += payload
            if fin:
                return buf.decode("utf-8")


def open_devtools_page(endpoint: str, timeout: float = 30.0) -> CdpTransport:
    """Connect to the first page target of a running browser's DevTools HTTP
    endpoint (e.g. ``http://127.0.0.1:9222``)."""
    import requests

    resp = requests.get(f"{endpoint.rstrip('/')}/json", timeout=timeout)
    resp.raise_for_status()
    for target in resp.json():
        if target.get("type") == "page" and "webSocketDebuggerUrl" in target:
            return DevtoolsSocket(target["webSocketDebuggerUrl"], timeout=timeout)
    raise NavigationFailure(f"no page target at {endpoint}")


# --- live provider ---------------------------------------------------------------

# Pulls (title, domain, thumbnail-as-data-URL) for each visible hit.  The
# selectors are configurable because result markup varies across engines.
_EXTRACT_JS_TEMPLATE = """
(() => {
  const out = [];
  for (const el of document.querySelectorAll(%(result_selector)s)) {
    const img = el.querySelector('img');
    if (!img || !img.complete || !img.naturalWidth) continue;
    const canvas = document.createElement('canvas');
    canvas.width = img.naturalWidth; canvas.height = img.naturalHeight;
    canvas.getContext('2d').drawImage(img, 0, 0);
    let data;
    try { data = canvas.toDataURL('image/png'); } catch (e) { continue; }
    const title = (el.getAttribute('aria-label') || el.textContent || '').trim();
    let domain = '';
    const link = el.closest('a') || el.querySelector('a');
    if (link && link.href) { try { domain = new URL(link.href).hostname; } catch (e) {} }
    out.push({title: title.slice(0, 200), domain: domain, thumb: data});
    if (out.length >= %(max_results)d) break;
  }
  return JSON.stringify(out);
})()
"""

_CONSENT_JS = """
(() => {
  for (const sel of [%(consent_selectors)s]) {
    const btn = document.querySelector(sel);
    if (btn) { btn.click(); return true; }
  }
  return false;
})()
"""


@dataclass
class LiveProviderSettings:
    endpoint: str = "http://127.0.0.1:9222"
    search_url: str = "https://images.google.com/"
    upload_input_selector: str = "input[type=file]"
    result_selector: str = "[data-result], a[aria-label]"
    ready_selector: str = "img"
    consent_selectors: tuple[str, ...] = (
        "button[aria-label*='Accept']",
        "#L2AGLb",
    )
    viewport: tuple[int, int] = (1280, 1000)
    nav_timeout: float = 20.0
    retries: int = 2
    poll_interval: float = 0.25
    pool_size: int = 1


class LiveSearchProvider:
    """Reverse-image search through a headless browser over DevTools.

    Each query: navigate to the search page, dismiss any consent dialog,
    upload the query image through the page's file input, wait for results,
    extract the visible hits, and archive the raw page screenshot.  Results
    are cached on disk by image hash so a repeated query never re-navigates.

    A pool of page sessions provides parallelism; at most one navigation is
    ever in flight per session.
    """

    provider_id = "live"

    def __init__(
        self,
        settings: LiveProviderSettings | None = None,
        cache: CaptureCache | None = None,
        transport_factory=None,
        sleep=time.sleep,
        clock=time.monotonic,
    ):
        self.settings = settings or LiveProviderSettings()
        self.cache = cache
        self._sleep = sleep
        self._clock = clock
        self._factory = transport_factory or (
            lambda: open_devtools_page(self.settings.endpoint, self.settings.nav_timeout)
        )
        self._pool: queue.Queue[CdpTransport] = queue.Queue()
        self._created = 0

    def _checkout(self) -> CdpTransport:
        try:
            return self._pool.get_nowait()
        except queue.Empty:
            pass
        if self._created < self.settings.pool_size:
            self._created += 1
            session = self._factory()
            self._setup(session)
            return session
        return self._pool.get()

    def _checkin(self, session: CdpTransport) -> None:
        self._pool.put(session)

    def _setup(self, session: CdpTransport) -> None:
        w, h = self.settings.viewport
        session.command("Page.enable")
        session.command(
            "Emulation.setDeviceMetricsOverride",
            {"width": w, "height": h, "deviceScaleFactor": 1, "mobile": False},
        )

    def close(self) -> None:
        while True:
            try:
                self._pool.get_nowait().close()
            except queue.Empty:
                return

    def search(self, query_image: str | Path, k: int) -> list[SearchResultEntry]:
        content_hash = hash_image_ref(query_image)
        if self.cache is not None:
            cached = self.cache.get(content_hash)
            if cached is not None:
                return cached[:k]

        last_error: ProviderError | None = None
        for attempt in range(self.settings.retries + 1):
            session = self._checkout()
            try:
                entries, thumbs, raw = self._run_query(session, Path(query_image), k)
            except ProviderError as exc:
                logger.warning("live search attempt %d failed: %s", attempt + 1, exc)
                last_error = exc
                # a failed session may be wedged mid-navigation; replace it
                try:
                    session.close()
                except Exception:
                    pass
                self._created -= 1
                continue
            self._checkin(session)
            if self.cache is not None:
                entries = self.cache.put(content_hash, entries, thumbs, raw)
            return entries[:k]
        assert last_error is not None
        raise last_error

    def _evaluate(self, session: CdpTransport, expression: str):
        result = session.command(
            "Runtime.evaluate",
            {"expression": expression, "returnByValue": True},
        )
        return result.get("result", {}).get("value")

    def _run_query(
        self, session: CdpTransport, image_path: Path, k: int
    ) -> tuple[list[SearchResultEntry], list[bytes], bytes | None]:
        s = self.settings
        session.command("Page.navigate", {"url": s.search_url})
        self._wait_for(session, "document.readyState === 'complete'", s.nav_timeout)

        consent_js = _CONSENT_JS % {
            "consent_selectors": ", ".join(json.dumps(sel) for sel in s.consent_selectors)
        }
        if self._evaluate(session, consent_js):
            logger.debug("dismissed consent dialog")

        doc = session.command("DOM.getDocument")
        node = session.command(
            "DOM.querySelector",
            {"nodeId": doc["root"]["nodeId"], "selector": s.upload_input_selector},
        )
        if not node.get("nodeId"):
            raise NavigationFailure(f"no upload input matching {s.upload_input_selector!r}")
        session.command(
            "DOM.setFileInputFiles",
            {"files": [str(image_path.resolve())], "nodeId": node["nodeId"]},
        )
        self._wait_for(
            session,
            f"document.querySelectorAll({json.dumps(s.ready_selector)}).length > 0",
            s.nav_timeout,
        )

        extract_js = _EXTRACT_JS_TEMPLATE % {
            "result_selector": json.dumps(s.result_selector),
            "max_results": k,
        }
        raw_rows = self._evaluate(session, extract_js)
        rows = json.loads(raw_rows) if raw_rows else []

        entries: list[SearchResultEntry] = []
        thumbs: list[bytes] = []
        for row in rows:
            data_url = row.get("thumb", "")
            if not data_url.startswith("data:image/"):
                continue
            thumbs.append(base64.b64decode(data_url.split(",", 1)[1]))
            entries.append(
                SearchResultEntry(
                    title=row.get("title", ""),
                    source_domain=row.get("domain", ""),
                    thumbnail="",  # rewritten by the cache to a local file
                )
            )

        shot = session.command("Page.captureScreenshot", {"format": "png"})
        raw = base64.b64decode(shot["data"]) if shot.get("data") else None
        return entries, thumbs, raw

    def _wait_for(self, session: CdpTransport, condition_js: str, timeout: float) -> None:
        deadline = self._clock() + timeout
        while True:
            if self._evaluate(session, f"!!({condition_js})"):
                return
            if self._clock() >= deadline:
                raise ProviderTimeout(f"condition not met in {timeout}s: {condition_js}")
            self._sleep(self.settings.poll_interval)
