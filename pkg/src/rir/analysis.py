"""Statistical layer: case classification, bootstrap intervals, KS tests,
and the accounting model for an agent that chooses when to retrieve.

Everything here is a pure function; randomness always flows through an
explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import kolmogorov

from .errors import EmptyInput, KeyMismatch, NonPositiveCount
from .store import RunRecord

# --- helping / hurting classification --------------------------------------------


@dataclass(frozen=True)
class CaseSets:
    """Partition of evaluated samples by the effect of adding retrieval."""

    helping: tuple[str, ...]
    hurting: tuple[str, ...]
    neutral: tuple[str, ...]
    per_category: dict[str, tuple[int, int]]

    @property
    def p(self) -> int:
        return len(self.helping)

    @property
    def q_hurt(self) -> int:
        return len(self.hurting)


def classify_cases(
    vanilla: Mapping[str, bool],
    treated: Mapping[str, bool],
    categories: Mapping[str, str] | None = None,
) -> CaseSets:
    """Split samples into helping (wrong -> right), hurting (right -> wrong),
    and neutral sets.  Both maps must cover exactly the same ids."""
    if set(vanilla) != set(treated):
        extra = set(vanilla) ^ set(treated)
        raise KeyMismatch(f"outcome maps differ on ids: {sorted(extra)[:5]}")
    helping, hurting, neutral = [], [], []
    for sample_id in sorted(vanilla):
        before, after = vanilla[sample_id], treated[sample_id]
        if not before and after:
            helping.append(sample_id)
        elif before and not after:
            hurting.append(sample_id)
        else:
            neutral.append(sample_id)
    per_category: dict[str, tuple[int, int]] = {}
    if categories is not None:
        counts: dict[str, list[int]] = {}
        for sample_id in helping:
            counts.setdefault(categories[sample_id], [0, 0])[0] += 1
        for sample_id in hurting:
            counts.setdefault(categories[sample_id], [0, 0])[1] += 1
        for sample_id in neutral:
            counts.setdefault(categories[sample_id], [0, 0])
        per_category = {cat: (h, u) for cat, (h, u) in counts.items()}
    return CaseSets(
        helping=tuple(helping),
        hurting=tuple(hurting),
        neutral=tuple(neutral),
        per_category=per_category,
    )


@dataclass(frozen=True)
class NetGainRow:
    category: str
    helping: int
    hurting: int
    net_gain: int
    net_gain_pct: float


def net_gain_table(
    cases: CaseSets, category_sizes: Mapping[str, int] | int
) -> list[NetGainRow]:
    """Per-category helping/hurting counts with net gain as a percent of the
    category size, sorted by net gain descending."""
    rows = []
    for cat, (helping, hurting) in cases.per_category.items():
        n = category_sizes if isinstance(category_sizes, int) else category_sizes[cat]
        net = helping - hurting
        rows.append(
            NetGainRow(
                category=cat,
                helping=helping,
                hurting=hurting,
                net_gain=net,
                net_gain_pct=round(100.0 * net / n, 2),
            )
        )
    rows.sort(key=lambda r: (-r.net_gain, r.category))
    return rows


def render_net_gain_table(rows: Sequence[NetGainRow]) -> str:
    width = max([len(r.category) for r in rows] + [8]) + 2
    lines = [
        "category".ljust(width) + "helping  hurting  net_gain  net_gain_pct"
    ]
    for r in rows:
        lines.append(
            r.category.ljust(width)
            + f"{r.helping:7d}  {r.hurting:7d}  {r.net_gain:8d}  {r.net_gain_pct:12.2f}"
        )
    return "\n".join(lines)


def correctness_map(
    records: Iterable[RunRecord], condition: str, metric: str = "judge"
) -> dict[str, bool]:
    """Sample-id to correctness for one condition.

    Samples the metric never evaluated (error records, unjudged samples) are
    left out entirely so they cannot masquerade as wrong answers.
    """
    out: dict[str, bool] = {}
    for record in records:
        if record.condition != condition:
            continue
        if metric == "judge":
            value = record.judge_correct
        elif metric == "recall":
            value = record.recall_hit
        else:
            raise ValueError(f"unknown metric {metric!r}")
        if value is not None:
            out[record.sample_id] = value
    return out


# --- bootstrap -------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    level: float

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError("interval bounds out of order")

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def bootstrap_ci(
    values: Sequence[float],
    iterations: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> Interval:
    """Seeded percentile-bootstrap confidence interval of the mean, in percent.

    Draws ``iterations`` resamples of ``len(values)`` with replacement and
    returns the (1-level)/2 and 1-(1-level)/2 quantiles of the resample
    means, scaled by 100.
    """
    if len(values) == 0:
        raise EmptyInput("cannot bootstrap an empty sample")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    arr = np.asarray(values, dtype=float)
    n = arr.shape[0]
    idx = rng.integers(0, n, size=(iterations, n))
    means = arr[idx].mean(axis=1) * 100.0
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return Interval(lo=float(lo), hi=float(hi), level=level)


# --- Kolmogorov-Smirnov ------------------------------------------------------------


class KsResult(NamedTuple):
    d: float
    p_value: float


def ks_two_sample(x: Sequence[float], y: Sequence[float]) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test.

    D is the exact supremum gap between the two empirical CDFs; the p-value
    comes from the asymptotic Kolmogorov distribution evaluated at
    ``sqrt(m*n/(m+n)) * D``.
    """
    if len(x) == 0 or len(y) == 0:
        raise EmptyInput("both samples must be non-empty")
    xs = np.sort(np.asarray(x, dtype=float))
    ys = np.sort(np.asarray(y, dtype=float))
    m, n = xs.shape[0], ys.shape[0]
    grid = np.concatenate([xs, ys])
    cdf_x = np.searchsorted(xs, grid, side="right") / m
    cdf_y = np.searchsorted(ys, grid, side="right") / n
    d = float(np.max(np.abs(cdf_x - cdf_y)))
    en = m * n / (m + n)
    p = float(kolmogorov(np.sqrt(en) * d))
    return KsResult(d=d, p_value=min(max(p, 0.0), 1.0))


def presence_compare(
    helping_counts: Sequence[float],
    hurting_counts: Sequence[float],
    log_transform: bool = True,
) -> KsResult:
    """KS-compare web-presence counts of helping vs hurting samples.

    Counts must be positive; they span orders of magnitude, so they are
    log10-transformed before testing (toggleable).
    """
    for counts in (helping_counts, hurting_counts):
        if any(c <= 0 for c in counts):
            raise NonPositiveCount("presence counts must be positive")
    if log_transform:
        helping_counts = list(np.log10(np.asarray(helping_counts, dtype=float)))
        hurting_counts = list(np.log10(np.asarray(hurting_counts, dtype=float)))
    return ks_two_sample(helping_counts, hurting_counts)


# --- agent accounting ---------------------------------------------------------------


class Dominance(str, Enum):
    AGENT_BETTER = "AgentBetter"
    DEFAULT_BETTER = "DefaultBetter"
    TIE = "Tie"


@dataclass(frozen=True)
class AgentModel:
    """Population counts and error rates for the retrieve-or-not decision.

    ``p`` counts helpful cases (retrieval flips wrong to right), ``q_hurt``
    hurtful ones (right to wrong).  ``a`` is the fraction of helpful cases
    where the agent skipped retrieval; ``b`` the fraction of hurtful cases
    where it retrieved anyway.  ``base_rir_correct`` is the always-retrieve
    correct count.
    """

    n: int
    p: int
    q_hurt: int
    a: float
    b: float
    base_rir_correct: int

    def __post_init__(self) -> None:
        if min(self.n, self.p, self.q_hurt, self.base_rir_correct) < 0:
            raise ValueError("counts must be non-negative")
        if self.p + self.q_hurt > self.n:
            raise ValueError("p + q_hurt cannot exceed n")
        if not (0.0 <= self.a <= 1.0 and 0.0 <= self.b <= 1.0):
            raise ValueError("error rates must lie in [0, 1]")
        if self.base_rir_correct > self.n:
            raise ValueError("base_rir_correct cannot exceed n")


@dataclass(frozen=True)
class AgentOutcome:
    expected_correct: float
    expected_accuracy: float
    dominance: Dominance


def agent_analysis(model: AgentModel) -> AgentOutcome:
    """Expected score of the deciding agent against always-retrieving.

    Relative to the always-retrieve baseline the agent loses ``a * p``
    correct answers (helpful cases it skipped) and regains
    ``(1 - b) * q_hurt`` (hurtful cases it avoided), so

        expected_correct = base_rir_correct - a*p + (1-b)*q_hurt

    Dominance compares the loss and gain terms, which for positive
    denominators is the p/q_hurt versus (1-b)/a inequality; the comparison
    form also settles the a = 0 and q_hurt = 0 boundaries without dividing.
    """
    loss = model.a * model.p
    gain = (1.0 - model.b) * model.q_hurt
    expected_correct = model.base_rir_correct - loss + gain
    expected_accuracy = 100.0 * expected_correct / model.n if model.n else 0.0
    if loss > gain:
        dominance = Dominance.DEFAULT_BETTER
    elif loss < gain:
        dominance = Dominance.AGENT_BETTER
    else:
        dominance = Dominance.TIE
    return AgentOutcome(
        expected_correct=expected_correct,
        expected_accuracy=expected_accuracy,
        dominance=dominance,
    )


def agent_sweep(
    n: int,
    p: int,
    q_hurt: int,
    base_rir_correct: int,
    a_values: Sequence[float],
    b_values: Sequence[float],
) -> list[dict]:
    """Expected accuracy over a grid of (a, b) misclassification rates."""
    grid = []
    for a in a_values:
        for b in b_values:
            outcome = agent_analysis(
                AgentModel(n=n, p=p, q_hurt=q_hurt, a=a, b=b,
                           base_rir_correct=base_rir_correct)
            )
            grid.append(
                {
                    "a": a,
                    "b": b,
                    "expected_accuracy": outcome.expected_accuracy,
                    "dominance": outcome.dominance.value,
                }
            )
    return grid


# --- interval tables -----------------------------------------------------------------


def ci_tables(
    records: Sequence[RunRecord],
    categories: Mapping[str, str],
    iterations: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> dict[str, dict[str, list[float]]]:
    """Bootstrap intervals per metric and category over 0/1 record outcomes.

    Fact-QA categories resample their own records for judge accuracy and
    recall; snake-category records yield intervals for the four species
    metrics over the full snake sample.
    """
    if not records:
        raise EmptyInput("no records")
    by_cat: dict[str, list[RunRecord]] = {}
    for record in records:
        by_cat.setdefault(categories[record.sample_id], []).append(record)

    out: dict[str, dict[str, list[float]]] = {"judge_acc": {}, "recall": {}}
    snake_records: list[RunRecord] = []
    for cat in sorted(by_cat):
        cat_records = by_cat[cat]
        if cat == "snake":
            snake_records = cat_records
            continue
        judged = [1.0 if r.judge_correct is True else 0.0 for r in cat_records]
        recalls = [1.0 if r.recall_hit is True else 0.0 for r in cat_records]
        ival = bootstrap_ci(judged, iterations=iterations, level=level, seed=seed)
        out["judge_acc"][cat] = [ival.lo, ival.hi]
        ival = bootstrap_ci(recalls, iterations=iterations, level=level, seed=seed)
        out["recall"][cat] = [ival.lo, ival.hi]

    if snake_records:
        for i, key in enumerate(
            ("binomial_em", "genus_em", "binomial_recall", "genus_recall")
        ):
            values = [
                1.0 if (r.snake_verdicts and r.snake_verdicts[i]) else 0.0
                for r in snake_records
            ]
            ival = bootstrap_ci(values, iterations=iterations, level=level, seed=seed)
            out.setdefault("snake", {})[key] = [ival.lo, ival.hi]
    return out
