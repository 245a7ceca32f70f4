"""Append-only JSONL persistence for run outcomes and prompt bundles.

One ``RunRecord`` per line, fields always present and in a fixed order, so
that two runs over the same inputs produce byte-identical stores apart from
the timestamp fields.  ``capture_path`` is stored relative to the store's
directory, keeping run directories relocatable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import StoreCorrupt
from .messages import PromptBundle

_FIELDS = (
    "sample_id",
    "condition",
    "backend_id",
    "capture_path",
    "answer_text",
    "judge_correct",
    "recall_hit",
    "snake_verdicts",
    "started_at",
    "finished_at",
    "error",
)

#: Record fields that vary across otherwise identical runs.
TIMESTAMP_FIELDS = ("started_at", "finished_at")


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one (sample, condition, backend) execution."""

    sample_id: str
    condition: str
    backend_id: str
    capture_path: str | None
    answer_text: str
    judge_correct: bool | None
    recall_hit: bool | None
    snake_verdicts: tuple[bool, bool, bool, bool] | None
    started_at: str
    finished_at: str
    error: str | None

    def __post_init__(self) -> None:
        has_answer = bool(self.answer_text)
        has_error = bool(self.error)
        if has_answer == has_error:
            raise ValueError("record needs exactly one of answer_text/error")
        is_rir = self.condition.startswith("RIR")
        if not is_rir and self.capture_path is not None:
            raise ValueError(f"{self.condition} record must not carry a capture path")
        if is_rir and not has_error and self.capture_path is None:
            raise ValueError(f"successful {self.condition} record needs a capture path")

    def key(self) -> tuple[str, str, str]:
        return (self.sample_id, self.condition, self.backend_id)

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in _FIELDS}
        if self.snake_verdicts is not None:
            out["snake_verdicts"] = list(self.snake_verdicts)
        return out

    @classmethod
    def from_dict(cls, row: dict) -> "RunRecord":
        verdicts = row.get("snake_verdicts")
        return cls(
            sample_id=row["sample_id"],
            condition=row["condition"],
            backend_id=row["backend_id"],
            capture_path=row.get("capture_path"),
            answer_text=row.get("answer_text", ""),
            judge_correct=row.get("judge_correct"),
            recall_hit=row.get("recall_hit"),
            snake_verdicts=tuple(verdicts) if verdicts is not None else None,
            started_at=row.get("started_at", ""),
            finished_at=row.get("finished_at", ""),
            error=row.get("error"),
        )


def _record_line(record: RunRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, separators=(",", ":"))


class RunStore:
    """Line-atomic, single-writer JSONL store of run records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: RunRecord) -> None:
        line = _record_line(record) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()

    def load(self) -> list[RunRecord]:
        if not self.path.exists():
            return []
        records = []
        for lineno, line in enumerate(
            self.path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise StoreCorrupt(f"{self.path}:{lineno}: {exc}") from exc
        return records

    def keys(self) -> set[tuple[str, str, str]]:
        return {r.key() for r in self.load()}

    def rewrite(self, records: list[RunRecord]) -> None:
        """Replace the store contents; used only by explicit error-retry compaction."""
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_name(self.path.name + ".tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for record in records:
                    fh.write(_record_line(record) + "\n")
            tmp.replace(self.path)


class PromptStore:
    """JSONL log of every prompt bundle sent, for replay-style checks."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, bundle: PromptBundle, backend_id: str) -> None:
        row = {
            "sample_id": bundle.sample_id,
            "condition": bundle.tag,
            "backend_id": backend_id,
            "parts": [
                {"role": p.role, "kind": p.kind, "body": p.body} for p in bundle.parts
            ],
        }
        line = json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()

    def load(self) -> list[dict]:
        if not self.path.exists():
            return []
        rows = []
        for lineno, line in enumerate(
            self.path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StoreCorrupt(f"{self.path}:{lineno}: {exc}") from exc
        return rows
