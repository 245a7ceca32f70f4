"""Benchmark manifests, seeded sampling, and entity-resolution clients.

Manifest files are JSONL with one sample per line:

    {"id": ..., "image": ..., "question": ..., "answers": [...],
     "category": ..., "wikidata_id": ..., "binomial": ...}

``wikidata_id`` and ``binomial`` are optional.  The entity cache is JSONL of
``EntityRecord`` rows; search-result counts are a two-column CSV
``wikidata_id,count``.
"""

from __future__ import annotations

import csv
import json
import logging
import random
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .errors import InsufficientSamples, ParseError, ResolutionFailure

logger = logging.getLogger(__name__)

WIKIDATA_ID_RE = re.compile(r"^Q\d+$")

#: Category label carried by snake-identification samples.
SNAKE_CATEGORY = "snake"

#: The eleven knowledge categories of the fact-QA benchmark.
INFOSEEK_CATEGORIES = (
    "building",
    "animal",
    "plant",
    "location",
    "food",
    "organization and company",
    "facility",
    "vehicle",
    "objects",
    "sport",
    "others",
)


@dataclass(frozen=True)
class VisualQuestion:
    """One benchmark sample: an image, a question about it, and its answer set."""

    id: str
    image: str
    question: str
    answers: tuple[str, ...]
    category: str
    entity_id: str | None = None
    binomial: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ParseError("sample id must be non-empty")
        if not self.question.strip():
            raise ParseError(f"sample {self.id!r}: question is empty")
        if not self.answers:
            raise ParseError(f"sample {self.id!r}: answers must be non-empty")
        if self.binomial is not None and len(self.binomial.split()) != 2:
            raise ParseError(
                f"sample {self.id!r}: binomial must be exactly two tokens, "
                f"got {self.binomial!r}"
            )


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    samples: tuple[VisualQuestion, ...]
    categories: frozenset[str]

    def __len__(self) -> int:
        return len(self.samples)

    def by_category(self) -> dict[str, list[VisualQuestion]]:
        out: dict[str, list[VisualQuestion]] = {}
        for s in self.samples:
            out.setdefault(s.category, []).append(s)
        return out

    def category_of(self) -> dict[str, str]:
        """Sample-id to category map, as consumed by metrics and analysis."""
        return {s.id: s.category for s in self.samples}


@dataclass(frozen=True)
class SamplePlan:
    """Exactly one of ``per_category`` (stratified) or ``total`` must be set."""

    per_category: int | None = None
    total: int | None = None

    def __post_init__(self) -> None:
        if (self.per_category is None) == (self.total is None):
            raise ParseError("sampling plan must set exactly one of per_category/total")
        for v in (self.per_category, self.total):
            if v is not None and v < 0:
                raise ParseError("sampling sizes must be non-negative")


def _sample_from_row(row: dict, lineno: int, path: Path) -> VisualQuestion:
    try:
        return VisualQuestion(
            id=str(row["id"]),
            image=str(row["image"]),
            question=str(row["question"]),
            answers=tuple(str(a) for a in row["answers"]),
            category=str(row["category"]),
            entity_id=row.get("wikidata_id"),
            binomial=row.get("binomial"),
        )
    except KeyError as exc:
        raise ParseError(f"{path}:{lineno}: missing field {exc}") from exc


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a JSONL manifest, validating id uniqueness and per-sample fields."""
    path = Path(path)
    samples: list[VisualQuestion] = []
    seen: set[str] = set()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        sample = _sample_from_row(row, lineno, path)
        if sample.id in seen:
            raise ParseError(f"{path}:{lineno}: duplicate sample id {sample.id!r}")
        seen.add(sample.id)
        samples.append(sample)
    name = path.stem
    categories = frozenset(s.category for s in samples)
    if "infoseek" in name.lower() and len(categories) != 11:
        raise ParseError(
            f"{path}: expected 11 categories, found {len(categories)}"
        )
    return DatasetManifest(name=name, samples=tuple(samples), categories=categories)


def sample_manifest(manifest: DatasetManifest, plan: SamplePlan, seed: int) -> DatasetManifest:
    """Seeded sampling without replacement; stratified when ``per_category`` is set.

    The same (manifest, plan, seed) always yields the same id set, on any
    platform: categories are visited in sorted order and draws come from a
    single ``random.Random(seed)``.
    """
    rng = random.Random(seed)
    if plan.per_category is not None:
        chosen: list[VisualQuestion] = []
        pools = manifest.by_category()
        for cat in sorted(pools):
            pool = pools[cat]
            if len(pool) < plan.per_category:
                raise InsufficientSamples(
                    f"category {cat!r} has {len(pool)} samples, "
                    f"need {plan.per_category}"
                )
            chosen.extend(rng.sample(pool, plan.per_category))
    else:
        assert plan.total is not None
        if len(manifest.samples) < plan.total:
            raise InsufficientSamples(
                f"manifest has {len(manifest.samples)} samples, need {plan.total}"
            )
        chosen = rng.sample(list(manifest.samples), plan.total)
    return DatasetManifest(
        name=manifest.name,
        samples=tuple(chosen),
        categories=frozenset(s.category for s in chosen),
    )


def load_and_sample(manifest_path: str | Path, plan: SamplePlan, seed: int) -> DatasetManifest:
    return sample_manifest(load_manifest(manifest_path), plan, seed)


# --- entity resolution --------------------------------------------------------


@dataclass(frozen=True)
class EntityRecord:
    wikidata_id: str
    entity_name: str
    search_result_count: int | None = None
    fetched_at: str = ""

    def __post_init__(self) -> None:
        if not WIKIDATA_ID_RE.match(self.wikidata_id):
            raise ParseError(f"invalid wikidata id {self.wikidata_id!r}")


class EntityClient(Protocol):
    def lookup(self, wikidata_id: str) -> str:
        """Return the entity name for an id, raising ResolutionFailure on miss."""
        ...


class FixtureEntityClient:
    """Resolves ids from an in-memory table; the offline stand-in for Wikidata."""

    def __init__(self, table: Mapping[str, str]):
        self._table = dict(table)
        self.requests = 0

    @classmethod
    def from_json(cls, path: str | Path) -> "FixtureEntityClient":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ParseError(f"{path}: entity fixture must be a JSON object")
        return cls({str(k): str(v) for k, v in data.items()})

    def lookup(self, wikidata_id: str) -> str:
        self.requests += 1
        try:
            return self._table[wikidata_id]
        except KeyError:
            raise ResolutionFailure(f"no fixture entry for {wikidata_id}") from None


class WikidataClient:
    """Resolves ids against the Wikidata entity-data endpoint.

    Uses the public JSON export of each entity page and takes the English
    label, which equals the page title.
    """

    def __init__(self, base_url: str = "https://www.wikidata.org", timeout: float = 10.0,
                 session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def lookup(self, wikidata_id: str) -> str:
        url = f"{self.base_url}/wiki/Special:EntityData/{wikidata_id}.json"
        try:
            resp = self._session.get(url, timeout=self.timeout)
        except Exception as exc:
            raise ResolutionFailure(f"{wikidata_id}: request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ResolutionFailure(f"{wikidata_id}: HTTP {resp.status_code}")
        try:
            entity = resp.json()["entities"][wikidata_id]
            return entity["labels"]["en"]["value"]
        except (KeyError, ValueError) as exc:
            raise ResolutionFailure(f"{wikidata_id}: no English label") from exc


class EntityCache:
    """On-disk JSONL cache of EntityRecord rows with a serialized writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[str, EntityRecord] = {}
        if self.path.exists():
            for lineno, line in enumerate(
                self.path.read_text(encoding="utf-8").splitlines(), start=1
            ):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    rec = EntityRecord(
                        wikidata_id=row["wikidata_id"],
                        entity_name=row["entity_name"],
                        search_result_count=row.get("search_result_count"),
                        fetched_at=row.get("fetched_at", ""),
                    )
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ParseError(f"{self.path}:{lineno}: bad cache row: {exc}") from exc
                self._records[rec.wikidata_id] = rec

    def get(self, wikidata_id: str) -> EntityRecord | None:
        return self._records.get(wikidata_id)

    def put(self, record: EntityRecord) -> None:
        with self._lock:
            self._records[record.wikidata_id] = record
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps({
                    "wikidata_id": record.wikidata_id,
                    "entity_name": record.entity_name,
                    "search_result_count": record.search_result_count,
                    "fetched_at": record.fetched_at,
                }, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._records)


def resolve_entities(
    ids: Iterable[str],
    client: EntityClient,
    cache: EntityCache | None = None,
) -> dict[str, EntityRecord]:
    """Resolve ids to EntityRecords; cache hits bypass the client.

    Failures are logged and the id is simply absent from the result.
    Malformed ids (not ``Q`` + digits) are a caller error and raise.
    """
    out: dict[str, EntityRecord] = {}
    for wid in ids:
        if not WIKIDATA_ID_RE.match(wid):
            raise ValueError(f"invalid wikidata id {wid!r}")
        if wid in out:
            continue
        cached = cache.get(wid) if cache is not None else None
        if cached is not None:
            out[wid] = cached
            continue
        try:
            name = client.lookup(wid)
        except ResolutionFailure as exc:
            logger.warning("entity resolution failed: %s", exc)
            continue
        record = EntityRecord(
            wikidata_id=wid,
            entity_name=name,
            fetched_at=datetime.now(timezone.utc).isoformat(),
        )
        if cache is not None:
            cache.put(record)
        out[wid] = record
    return out


def load_search_counts(path: str | Path) -> dict[str, int]:
    """Load a ``wikidata_id,count`` CSV; a non-numeric first row is a header."""
    out: dict[str, int] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) < 2 or not row[0].strip():
                continue
            try:
                count = int(row[1])
            except ValueError:
                continue
            out[row[0].strip()] = count
    return out
