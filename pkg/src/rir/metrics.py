"""Evaluation metrics and aggregate reporting.

Six metrics cover the two benchmark styles:

* fact QA: judge accuracy (graded externally, see :func:`rir.backends.judge`)
  and answer-in-prediction recall (normalized substring containment);
* species identification: exact-match and containment at both the full
  binomial and the genus level.

Reports aggregate per category, average the categories unweighted, and can
attach relative changes against a baseline report.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import Mapping, Sequence

from .datasets import SNAKE_CATEGORY
from .errors import EmptyInput, KeyMismatch, MalformedGroundTruth
from .store import RunRecord

#: First capitalized-token + lowercase-token pair in a reply is read as the
#: predicted binomial.  Module-level so the extraction strategy stays
#: swappable.
BINOMIAL_PATTERN = re.compile(r"\b([A-Z][a-z]+)\s+([a-z]+)\b")


def normalize_text(s: str) -> str:
    """Compatibility-normalize, lowercase, strip punctuation to spaces,
    collapse whitespace, trim.

    >>> normalize_text("Czech  Republic.")
    'czech republic'
    """
    s = unicodedata.normalize("NFKC", s).lower()
    s = "".join(ch if ch.isalnum() else " " for ch in s)
    return " ".join(s.split())


def answer_in_prediction(answers: Sequence[str], prediction: str) -> bool:
    """True iff any normalized ground-truth answer is a substring of the
    normalized prediction.  Appending text to the prediction can only turn
    False into True, never the reverse."""
    if not answers:
        raise ValueError("answers must be non-empty")
    pred = normalize_text(prediction)
    return any(normalize_text(a) in pred for a in answers if normalize_text(a))


@dataclass(frozen=True)
class SnakeVerdict:
    """Exact-match and containment verdicts for one species prediction.

    The four booleans always satisfy: binomial_em implies genus_em and
    binomial_recall; genus_em implies genus_recall; binomial_recall implies
    genus_recall.
    """

    binomial_em: bool
    genus_em: bool
    binomial_recall: bool
    genus_recall: bool

    def as_tuple(self) -> tuple[bool, bool, bool, bool]:
        return (self.binomial_em, self.genus_em, self.binomial_recall, self.genus_recall)

    def implications_hold(self) -> bool:
        return (
            (not self.binomial_em or self.genus_em)
            and (not self.binomial_em or self.binomial_recall)
            and (not self.genus_em or self.genus_recall)
            and (not self.binomial_recall or self.genus_recall)
        )


def snake_metrics(
    gt_binomial: str,
    prediction: str,
    pattern: re.Pattern = BINOMIAL_PATTERN,
) -> SnakeVerdict:
    """Score a species prediction against the ground-truth binomial name.

    Recall metrics use normalized containment of the full binomial / the
    genus (its first token).  Exact-match metrics extract the first
    binomial-shaped pattern from the raw prediction and compare it
    case-insensitively against the ground truth; a reply with no such
    pattern scores False on both.
    """
    tokens = gt_binomial.split()
    if len(tokens) != 2:
        raise MalformedGroundTruth(
            f"binomial must be exactly two tokens, got {gt_binomial!r}"
        )
    genus, species = tokens
    gt_norm = f"{genus} {species}".lower()

    binomial_recall = answer_in_prediction([gt_binomial], prediction)
    genus_recall = answer_in_prediction([genus], prediction)

    match = pattern.search(prediction)
    if match is None:
        binomial_em = genus_em = False
    else:
        extracted_binomial = f"{match.group(1)} {match.group(2)}".lower()
        binomial_em = extracted_binomial == gt_norm
        genus_em = match.group(1).lower() == genus.lower()

    return SnakeVerdict(
        binomial_em=binomial_em,
        genus_em=genus_em,
        binomial_recall=binomial_recall,
        genus_recall=genus_recall,
    )


# --- aggregation ---------------------------------------------------------------


@dataclass(frozen=True)
class CategoryStats:
    n: int
    judge_hits: int
    judge_graded: int
    recall_hits: int

    @property
    def judge_acc(self) -> float | None:
        """Percent correct among graded records; None when nothing was graded."""
        if self.judge_graded == 0:
            return None
        return 100.0 * self.judge_hits / self.judge_graded

    @property
    def recall(self) -> float:
        return 100.0 * self.recall_hits / self.n if self.n else 0.0


_SNAKE_KEYS = ("binomial_em", "genus_em", "binomial_recall", "genus_recall")


@dataclass(frozen=True)
class MetricsReport:
    per_category: dict[str, CategoryStats]
    averages: dict[str, float | None]
    snake: dict[str, float] | None
    deltas: dict[str, float | None] | None
    judge_missing: int

    def to_dict(self) -> dict:
        return {
            "per_category": {
                cat: {"judge_acc": s.judge_acc, "recall": s.recall, "n": s.n}
                for cat, s in sorted(self.per_category.items())
            },
            "averages": self.averages,
            "snake": self.snake,
            "deltas": self.deltas,
            "judge_missing": self.judge_missing,
        }


def _mean(values: Sequence[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate_report(
    records: Sequence[RunRecord],
    categories: Mapping[str, str],
    baseline: "MetricsReport | None" = None,
) -> MetricsReport:
    """Aggregate records into per-category and average percentages.

    ``categories`` maps sample ids to category names (normally
    ``DatasetManifest.category_of()``).  Error records count toward ``n`` and
    score as misses.  Records never graded by a judge are excluded from the
    judge-accuracy denominator and surface in ``judge_missing``.  Samples in
    the snake category aggregate into the four species metrics instead of
    the category table.  With a ``baseline``, ``deltas`` holds the relative
    percent change of each average.
    """
    if not records:
        raise EmptyInput("no records to aggregate")
    missing = {r.sample_id for r in records} - set(categories)
    if missing:
        raise KeyMismatch(f"no category for sample ids: {sorted(missing)[:5]}")

    by_cat: dict[str, list[RunRecord]] = {}
    for record in records:
        by_cat.setdefault(categories[record.sample_id], []).append(record)

    per_category: dict[str, CategoryStats] = {}
    judge_missing = 0
    snake_records: list[RunRecord] = []
    for cat, cat_records in by_cat.items():
        if cat == SNAKE_CATEGORY:
            snake_records.extend(cat_records)
            continue
        judge_graded = sum(1 for r in cat_records if r.judge_correct is not None)
        judge_missing += sum(
            1 for r in cat_records if r.judge_correct is None and not r.error
        )
        per_category[cat] = CategoryStats(
            n=len(cat_records),
            judge_hits=sum(1 for r in cat_records if r.judge_correct is True),
            judge_graded=judge_graded,
            recall_hits=sum(1 for r in cat_records if r.recall_hit is True),
        )

    judge_values = [s.judge_acc for s in per_category.values() if s.judge_acc is not None]
    recall_values = [s.recall for s in per_category.values()]
    averages: dict[str, float | None] = {
        "judge_acc": _mean(judge_values),
        "recall": _mean(recall_values),
    }

    snake: dict[str, float] | None = None
    if snake_records:
        n = len(snake_records)
        hits = {key: 0 for key in _SNAKE_KEYS}
        for record in snake_records:
            if record.snake_verdicts is None:
                continue
            for key, value in zip(_SNAKE_KEYS, record.snake_verdicts):
                hits[key] += bool(value)
        snake = {key: 100.0 * hits[key] / n for key in _SNAKE_KEYS}
        snake["n"] = n

    deltas: dict[str, float | None] | None = None
    if baseline is not None:
        deltas = {}
        for key in ("judge_acc", "recall"):
            before = baseline.averages.get(key)
            after = averages.get(key)
            deltas[key] = relative_change(before, after)
        if snake and baseline.snake:
            for key in _SNAKE_KEYS:
                deltas[f"snake_{key}"] = relative_change(
                    baseline.snake.get(key), snake.get(key)
                )

    return MetricsReport(
        per_category=per_category,
        averages=averages,
        snake=snake,
        deltas=deltas,
        judge_missing=judge_missing,
    )


def relative_change(before: float | None, after: float | None) -> float | None:
    """Percent change from ``before`` to ``after``; None when undefined."""
    if before is None or after is None or before == 0:
        return None
    return 100.0 * (after - before) / before


# --- rendering -------------------------------------------------------------------


def _fmt(value: float | None, width: int = 7) -> str:
    return f"{value:{width}.2f}" if value is not None else " " * (width - 1) + "-"


def render_category_table(reports: Mapping[str, MetricsReport]) -> str:
    """Aligned text table: one row per labelled report, columns for the
    average, the relative change, and every category; one block per metric."""
    categories = sorted({c for rep in reports.values() for c in rep.per_category})
    label_w = max([len(label) for label in reports] + [10]) + 2
    lines: list[str] = []
    for metric in ("judge_acc", "recall"):
        lines.append(f"[{metric}]")
        header = "".join(c[:10].rjust(12) for c in categories)
        lines.append(" " * label_w + "   Avg.     d%" + header)
        for label, rep in reports.items():
            delta = rep.deltas.get(metric) if rep.deltas else None
            row = label.ljust(label_w)
            row += _fmt(rep.averages.get(metric))
            row += _fmt(delta)
            for cat in categories:
                stats = rep.per_category.get(cat)
                value = None
                if stats is not None:
                    value = stats.judge_acc if metric == "judge_acc" else stats.recall
                row += _fmt(value, width=12)
            lines.append(row)
        lines.append("")
    snake_reports = {k: r for k, r in reports.items() if r.snake}
    if snake_reports:
        lines.append("[species]")
        lines.append(" " * label_w + "".join(k.rjust(16) for k in _SNAKE_KEYS))
        for label, rep in snake_reports.items():
            assert rep.snake is not None
            row = label.ljust(label_w)
            row += "".join(_fmt(rep.snake[k], width=16) for k in _SNAKE_KEYS)
            lines.append(row)
        lines.append("")
    return "\n".join(lines)


def render_category_csv(reports: Mapping[str, MetricsReport]) -> str:
    categories = sorted({c for rep in reports.values() for c in rep.per_category})
    lines = ["label,metric,avg,delta_pct," + ",".join(categories)]
    for label, rep in reports.items():
        for metric in ("judge_acc", "recall"):
            delta = rep.deltas.get(metric) if rep.deltas else None
            cells = [label, metric]
            avg = rep.averages.get(metric)
            cells.append("" if avg is None else f"{avg:.2f}")
            cells.append("" if delta is None else f"{delta:.2f}")
            for cat in categories:
                stats = rep.per_category.get(cat)
                value = None
                if stats is not None:
                    value = stats.judge_acc if metric == "judge_acc" else stats.recall
                cells.append("" if value is None else f"{value:.2f}")
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
