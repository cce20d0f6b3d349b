"""Rank agreement between score series and score-pool distribution statistics.

Summary-level agreement is Spearman's rho with average ranks for ties;
system-level agreement ranks per-system mean scores with a count-of-less-
or-equal rank (ties share the maximal count) and correlates the two rank
lists. A constant series correlates at 0 by convention.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import Counter
from dataclasses import dataclass
from statistics import StatisticsError, correlation, fmean
from typing import Iterable, Mapping, Sequence

from .errors import InsufficientOverlap, LengthMismatch, TooFewPoints, TooFewSystems
from .pairing import PreferencePair
from .scoring import PERCENT, ScoredRecord, likert_bin, quantize_percent

Key = tuple[str, str]  # (doc_id, summarizer_id)


@dataclass(frozen=True)
class ScoreSeries:
    keys: tuple[Key, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.keys) != len(self.values):
            raise LengthMismatch(
                f"{len(self.keys)} keys versus {len(self.values)} values"
            )
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("score series keys must be unique")

    @classmethod
    def from_records(
        cls, records: Sequence[ScoredRecord], criterion: str = "composite"
    ) -> "ScoreSeries":
        keys = tuple((r.doc_id, r.summarizer_id) for r in records)
        values = tuple(float(r.value_for(criterion)) for r in records)
        return cls(keys, values)

    @classmethod
    def from_rows(cls, rows: Iterable[Mapping]) -> "ScoreSeries":
        pairs = [((row["doc_id"], row["summarizer_id"]), float(row["score"])) for row in rows]
        return cls(tuple(k for k, _ in pairs), tuple(v for _, v in pairs))


def average_ranks(values: Sequence) -> list[float]:
    """1-based ranks; tied values share the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        shared = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = shared
        i = j + 1
    return ranks


def spearman(xs: Sequence, ys: Sequence) -> float:
    """Spearman's rho with average-rank ties; 0.0 when either series is constant."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} versus {len(ys)} points")
    if len(xs) < 2:
        raise TooFewPoints("need at least two paired points")
    try:
        return correlation(average_ranks(xs), average_ranks(ys))
    except StatisticsError:
        return 0.0


def rank_systems(avg_scores: Sequence) -> list[int]:
    """Rank of each score = how many scores are <= it; ties share the maximal count."""
    ordered = sorted(avg_scores)
    return [bisect_right(ordered, value) for value in avg_scores]


@dataclass(frozen=True)
class AgreementReport:
    summary_level_rho: float
    system_level_rho: float
    n_summaries: int
    n_systems: int

    def to_json(self) -> dict:
        return {
            "summary_level_rho": self.summary_level_rho,
            "system_level_rho": self.system_level_rho,
            "n_summaries": self.n_summaries,
            "n_systems": self.n_systems,
        }


def agreement_report(
    pred: ScoreSeries,
    human: ScoreSeries,
    system_of: Mapping[Key, str] | None = None,
) -> AgreementReport:
    """Summary- and system-level agreement over the keys both series share.

    By default a summary's system is its summarizer_id; pass system_of to
    group differently.
    """
    pred_map = dict(zip(pred.keys, pred.values))
    human_map = dict(zip(human.keys, human.values))
    common = sorted(set(pred_map) & set(human_map))
    if len(common) < 2:
        raise InsufficientOverlap(f"only {len(common)} shared keys")

    summary_rho = spearman([pred_map[k] for k in common], [human_map[k] for k in common])

    groups: dict[str, list[Key]] = {}
    for key in common:
        system = key[1] if system_of is None else system_of[key]
        groups.setdefault(system, []).append(key)
    systems = sorted(groups)
    if len(systems) < 2:
        raise TooFewSystems(f"only {len(systems)} systems in the overlap")

    pred_means = [fmean(pred_map[k] for k in groups[s]) for s in systems]
    human_means = [fmean(human_map[k] for k in groups[s]) for s in systems]
    system_rho = spearman(rank_systems(pred_means), rank_systems(human_means))

    return AgreementReport(
        summary_level_rho=summary_rho,
        system_level_rho=system_rho,
        n_summaries=len(common),
        n_systems=len(systems),
    )


@dataclass(frozen=True)
class DistributionStats:
    """Composite-score histograms per summarizer category plus pair-role shares."""

    histograms: tuple[tuple[str, int, int], ...]  # (category, bin, count)
    roles: tuple[tuple[str, str, int, int], ...]  # (category, role, count, pool)

    def rows(self) -> list[tuple[str, str, int, float]]:
        out: list[tuple[str, str, int, float]] = []
        totals: Counter[str] = Counter()
        for category, _, count in self.histograms:
            totals[category] += count
        for category, bin_, count in self.histograms:
            percent = 100 * count / totals[category] if totals[category] else 0.0
            out.append((category, str(bin_), count, percent))
        for category, role, count, pool in self.roles:
            percent = 100 * count / pool if pool else 0.0
            out.append((category, role, count, percent))
        return out

    def to_csv(self) -> str:
        lines = ["category,bin,count,percent"]
        for category, bin_, count, percent in self.rows():
            lines.append(f"{category},{bin_},{count},{percent:.4f}")
        return "\n".join(lines) + "\n"


def distribution_stats(
    records: Sequence[ScoredRecord],
    category_of: Mapping[str, str],
    pairs: Sequence[PreferencePair] = (),
) -> DistributionStats:
    """Likert-bin histograms of composite scores per category, plus the share of
    each category's candidate pool that appears as chosen/rejected in pairs."""
    histogram: dict[str, Counter[int]] = {}
    pool: dict[str, set[Key]] = {}
    for record in records:
        category = category_of[record.summarizer_id]
        value = record.scores.composite
        bin_ = quantize_percent(value) if record.scores.scale == PERCENT else likert_bin(value)
        histogram.setdefault(category, Counter())[bin_] += 1
        pool.setdefault(category, set()).add((record.doc_id, record.summarizer_id))

    chosen_keys = {(p.doc_id, p.chosen.summarizer_id) for p in pairs}
    rejected_keys = {(p.doc_id, p.rejected.summarizer_id) for p in pairs}

    histograms = tuple(
        (category, bin_, histogram[category].get(bin_, 0))
        for category in sorted(histogram)
        for bin_ in range(1, 6)
    )
    roles = tuple(
        (category, role, len(role_keys & pool[category]), len(pool[category]))
        for category in sorted(pool)
        for role, role_keys in (("chosen", chosen_keys), ("rejected", rejected_keys))
    )
    return DistributionStats(histograms=histograms, roles=roles)
