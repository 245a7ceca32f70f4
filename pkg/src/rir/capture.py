"""Search-result capture composition and masking ablations.

A capture is a single canvas with the query image letterboxed into a left
panel and result thumbnails tiled on the right, each with a title strip
below it.  Placement is fully deterministic: composing the same inputs twice
yields byte-identical PNG data.  Every drawn region's rectangle is recorded
so the masking ablations can blank exactly the returned images or exactly
the returned text.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Sequence

from PIL import Image, ImageDraw, ImageFont

from .errors import ParseError, TooManyEntries, UndecodableImage

#: Fill used when masking result regions.
MASK_FILL = (128, 128, 128)

_CANVAS_BG = (255, 255, 255)
_TEXT_FILL = (32, 32, 32)
_DOMAIN_FILL = (96, 96, 96)


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    @property
    def right(self) -> int:
        return self.x + self.w

    @property
    def bottom(self) -> int:
        return self.y + self.h

    def intersects(self, other: "Rect") -> bool:
        return not (
            self.right <= other.x
            or other.right <= self.x
            or self.bottom <= other.y
            or other.bottom <= self.y
        )

    def contains(self, other: "Rect") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.right <= self.right
            and other.bottom <= self.bottom
        )

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values: Sequence[int]) -> "Rect":
        x, y, w, h = values
        return cls(int(x), int(y), int(w), int(h))


class MaskMode(Enum):
    NONE = "None"
    MASK_IMAGES = "MaskImages"
    MASK_TEXT = "MaskText"


@dataclass(frozen=True)
class LayoutSpec:
    """Canvas geometry for composed captures.

    The left ``left_fraction`` of the canvas is reserved for the query image;
    the remainder holds a ``grid_rows`` x ``grid_cols`` grid of result tiles,
    each with ``title_strip_h`` pixels of caption space underneath.
    """

    canvas_w: int = 1280
    canvas_h: int = 1000
    left_fraction: float = 0.4
    grid_rows: int = 2
    grid_cols: int = 4
    title_strip_h: int = 28
    cell_pad: int = 8

    def __post_init__(self) -> None:
        if not 0.0 < self.left_fraction < 1.0:
            raise ParseError("left_fraction must be in (0, 1)")
        if self.left_fraction * self.canvas_w < 200:
            raise ParseError("query panel narrower than 200 px")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ParseError("grid must have at least one cell")
        if self.title_strip_h < 0 or self.cell_pad < 0:
            raise ParseError("strip height and padding must be non-negative")

    @property
    def capacity(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def left_width(self) -> int:
        return int(round(self.left_fraction * self.canvas_w))


@dataclass(frozen=True)
class SearchResultEntry:
    """One reverse-image-search hit: a thumbnail and its caption text.

    ``title_box``/``thumb_box`` are assigned when the entry is placed on a
    capture canvas and are ``None`` for entries fresh from a provider.
    """

    title: str
    source_domain: str
    thumbnail: str
    title_box: Rect | None = None
    thumb_box: Rect | None = None


@dataclass(frozen=True)
class SearchCapture:
    """A composed results canvas plus the geometry of everything on it."""

    image: Image.Image
    query_box: Rect
    entries: tuple[SearchResultEntry, ...]
    provider_id: str
    fetched_at: str
    content_hash: str
    path: Path | None = None

    def boxes(self) -> list[Rect]:
        """All recorded rectangles: query box, then thumb/title per entry."""
        out = [self.query_box]
        for e in self.entries:
            if e.thumb_box is not None:
                out.append(e.thumb_box)
            if e.title_box is not None:
                out.append(e.title_box)
        return out

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        self.image.save(buf, format="PNG")
        return buf.getvalue()


def _load_image(ref: Image.Image | str | Path) -> tuple[Image.Image, bytes | None]:
    """Decode an image reference, returning the image and its file bytes if any."""
    if isinstance(ref, Image.Image):
        return ref.convert("RGB"), None
    path = Path(ref)
    try:
        data = path.read_bytes()
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise UndecodableImage(f"cannot decode image {path}: {exc}") from exc
    return img.convert("RGB"), data


def hash_image_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_image_ref(ref: Image.Image | str | Path) -> str:
    """Content hash of an image reference: file bytes, or raw pixels for
    an in-memory image."""
    if isinstance(ref, Image.Image):
        return hashlib.sha256(ref.convert("RGB").tobytes()).hexdigest()
    try:
        return hash_image_bytes(Path(ref).read_bytes())
    except OSError as exc:
        raise UndecodableImage(f"cannot read image {ref}: {exc}") from exc


def _letterbox(img: Image.Image, box: Rect) -> tuple[Image.Image, Rect]:
    """Scale ``img`` to fit ``box`` preserving aspect; return image and its rect."""
    scale = min(box.w / img.width, box.h / img.height)
    w = max(1, int(img.width * scale))
    h = max(1, int(img.height * scale))
    resized = img.resize((w, h), Image.Resampling.LANCZOS)
    x = box.x + (box.w - w) // 2
    y = box.y + (box.h - h) // 2
    return resized, Rect(x, y, w, h)


_FONT = ImageFont.load_default()


def _truncate(text: str, width: int) -> str:
    if _FONT.getlength(text) <= width:
        return text
    while text and _FONT.getlength(text + "...") > width:
        text = text[:-1]
    return text + "..." if text else ""


def compose_capture(
    query_image: Image.Image | str | Path,
    entries: Sequence[SearchResultEntry],
    layout: LayoutSpec | None = None,
    *,
    provider_id: str = "",
    content_hash: str | None = None,
    fetched_at: str | None = None,
) -> SearchCapture:
    """Compose the query image and result entries onto a single canvas.

    Placement is deterministic: entry ``i`` lands at grid cell
    ``(i // cols, i % cols)`` and the query image is letterboxed into the
    left panel.  Identical inputs produce identical PNG bytes.
    """
    layout = layout or LayoutSpec()
    if len(entries) > layout.capacity:
        raise TooManyEntries(
            f"{len(entries)} entries exceed the {layout.grid_rows}x{layout.grid_cols} grid"
        )
    if content_hash is None:
        content_hash = hash_image_ref(query_image)
    qimg, _ = _load_image(query_image)

    canvas = Image.new("RGB", (layout.canvas_w, layout.canvas_h), _CANVAS_BG)
    draw = ImageDraw.Draw(canvas)

    pad = layout.cell_pad
    panel = Rect(pad, pad, layout.left_width - 2 * pad, layout.canvas_h - 2 * pad)
    scaled, query_box = _letterbox(qimg, panel)
    canvas.paste(scaled, (query_box.x, query_box.y))

    right_x = layout.left_width
    cell_w = (layout.canvas_w - right_x) // layout.grid_cols
    cell_h = layout.canvas_h // layout.grid_rows

    placed: list[SearchResultEntry] = []
    for i, entry in enumerate(entries):
        row, col = divmod(i, layout.grid_cols)
        cx = right_x + col * cell_w
        cy = row * cell_h
        thumb_box = Rect(
            cx + pad,
            cy + pad,
            cell_w - 2 * pad,
            cell_h - 2 * pad - layout.title_strip_h,
        )
        title_box = Rect(
            cx + pad,
            thumb_box.bottom,
            cell_w - 2 * pad,
            layout.title_strip_h,
        )
        timg, _ = _load_image(entry.thumbnail)
        scaled_thumb, drawn = _letterbox(timg, thumb_box)
        canvas.paste(scaled_thumb, (drawn.x, drawn.y))

        line_h = layout.title_strip_h // 2
        draw.text(
            (title_box.x + 1, title_box.y + 1),
            _truncate(entry.title, title_box.w - 2),
            font=_FONT,
            fill=_TEXT_FILL,
        )
        if line_h > 0:
            draw.text(
                (title_box.x + 1, title_box.y + 1 + line_h),
                _truncate(entry.source_domain, title_box.w - 2),
                font=_FONT,
                fill=_DOMAIN_FILL,
            )
        placed.append(
            dataclasses.replace(entry, title_box=title_box, thumb_box=thumb_box)
        )

    capture = SearchCapture(
        image=canvas,
        query_box=query_box,
        entries=tuple(placed),
        provider_id=provider_id,
        fetched_at=fetched_at or datetime.now(timezone.utc).isoformat(),
        content_hash=content_hash,
    )
    _check_geometry(capture, layout)
    return capture


def _check_geometry(capture: SearchCapture, layout: LayoutSpec) -> None:
    canvas = Rect(0, 0, layout.canvas_w, layout.canvas_h)
    boxes = capture.boxes()
    for box in boxes:
        if not canvas.contains(box):
            raise ParseError(f"box {box} escapes the canvas")
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            if a.intersects(b):
                raise ParseError(f"boxes {a} and {b} overlap")


def apply_mask(capture: SearchCapture, mode: MaskMode) -> SearchCapture:
    """Blank the thumbnail or title regions with solid mid-gray.

    ``MaskMode.NONE`` returns the capture unchanged.  The query panel is
    never touched; masking is idempotent and the two masks commute.
    """
    if mode is MaskMode.NONE:
        return capture
    img = capture.image.copy()
    draw = ImageDraw.Draw(img)
    for entry in capture.entries:
        box = entry.thumb_box if mode is MaskMode.MASK_IMAGES else entry.title_box
        if box is None:
            continue
        draw.rectangle((box.x, box.y, box.right - 1, box.bottom - 1), fill=MASK_FILL)
    return dataclasses.replace(capture, image=img, path=None)


def save_capture(capture: SearchCapture, path: str | Path) -> SearchCapture:
    """Write the capture PNG plus a geometry sidecar; returns a capture with
    ``path`` set.  The sidecar lives at the same path with a .json suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    capture.image.save(path, format="PNG")
    sidecar = {
        "provider_id": capture.provider_id,
        "fetched_at": capture.fetched_at,
        "content_hash": capture.content_hash,
        "query_box": capture.query_box.as_list(),
        "entries": [
            {
                "title": e.title,
                "source_domain": e.source_domain,
                "thumbnail": e.thumbnail,
                "title_box": e.title_box.as_list() if e.title_box else None,
                "thumb_box": e.thumb_box.as_list() if e.thumb_box else None,
            }
            for e in capture.entries
        ],
    }
    path.with_suffix(".json").write_text(
        json.dumps(sidecar, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return dataclasses.replace(capture, path=path)


def load_sidecar(path: str | Path) -> dict:
    """Read a capture sidecar, parsing box lists back into Rects."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    data["query_box"] = Rect.from_list(data["query_box"])
    for entry in data["entries"]:
        for key in ("title_box", "thumb_box"):
            if entry[key] is not None:
                entry[key] = Rect.from_list(entry[key])
    return data
