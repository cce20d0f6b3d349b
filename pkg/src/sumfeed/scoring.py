"""Exact-ratio scoring: fine-grained percentages, Likert composites, abstractiveness.

All scores are kept as fractions.Fraction so golden values and pairing
thresholds compare exactly; floats appear only at serialization time,
alongside numerator/denominator fields that survive a JSON round trip.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import EmptyKeyFacts, EmptySummary, NoScores, OutOfRange
from .protocol import (
    AlignmentEntry,
    DimensionsPayload,
    FineGrainedPayload,
    OverallPayload,
    RawFeedback,
    SentenceVerdict,
)

LIKERT = "likert"
PERCENT = "percent"
SCALES = (LIKERT, PERCENT)

CRITERIA = ("composite", "faithfulness", "completeness", "conciseness")

_DIMENSIONS = ("faithfulness", "completeness", "conciseness")
_SCORE_FIELDS = _DIMENSIONS + ("overall", "composite")


def faithfulness_score(verdicts: Sequence[SentenceVerdict]) -> Fraction:
    """Fraction of sentences judged free of factuality errors."""
    if not verdicts:
        raise EmptySummary("cannot score faithfulness with zero sentences")
    good = sum(1 for v in verdicts if v.category == "no_error")
    return Fraction(good, len(verdicts))


def completeness_score(
    alignment: Sequence[AlignmentEntry], fact_count: int | None = None
) -> Fraction:
    """Fraction of key facts the summary covers (a yes counts even if every
    cited line was dropped as out of range)."""
    count = len(alignment) if fact_count is None else fact_count
    if count == 0:
        raise EmptyKeyFacts("cannot score completeness with zero key facts")
    covered = sum(1 for a in alignment if a.response == "yes")
    return Fraction(covered, count)


def conciseness_score(alignment: Sequence[AlignmentEntry], sentence_count: int) -> Fraction:
    """Fraction of summary sentences cited by at least one covered key fact;
    a sentence cited by several facts counts once."""
    if sentence_count == 0:
        raise EmptySummary("cannot score conciseness with zero sentences")
    used: set[int] = set()
    for entry in alignment:
        if entry.response == "yes":
            used.update(entry.line_numbers)
    return Fraction(len(used), sentence_count)


@dataclass(frozen=True)
class FeedbackScores:
    scale: str
    composite: Fraction
    faithfulness: Fraction | None = None
    completeness: Fraction | None = None
    conciseness: Fraction | None = None
    overall: Fraction | None = None

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        low, high = (Fraction(1), Fraction(5)) if self.scale == LIKERT else (Fraction(0), Fraction(1))
        for name in _SCORE_FIELDS:
            value = getattr(self, name)
            if value is not None and not low <= value <= high:
                raise ValueError(f"{name} {value} outside [{low}, {high}] on the {self.scale} scale")

    def dimension(self, name: str) -> Fraction:
        if name not in CRITERIA:
            raise ValueError(f"unknown criterion {name!r}")
        value = getattr(self, name)
        if value is None:
            raise NoScores(f"no {name} score on this record")
        return value

    def to_json(self) -> dict:
        obj: dict = {"scale": self.scale}
        for name in _SCORE_FIELDS:
            value = getattr(self, name)
            if value is None:
                obj[name] = None
            else:
                obj[name] = float(value)
                obj[name + "_num"] = value.numerator
                obj[name + "_den"] = value.denominator
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "FeedbackScores":
        def ratio(name: str) -> Fraction | None:
            if obj.get(name) is None:
                return None
            return Fraction(obj[name + "_num"], obj[name + "_den"])

        return cls(
            scale=obj["scale"],
            composite=ratio("composite"),
            faithfulness=ratio("faithfulness"),
            completeness=ratio("completeness"),
            conciseness=ratio("conciseness"),
            overall=ratio("overall"),
        )


def composite_score(
    faithfulness: Fraction | None = None,
    completeness: Fraction | None = None,
    conciseness: Fraction | None = None,
    overall: Fraction | None = None,
) -> Fraction:
    """Overall score when present, else the unweighted mean of the three dimensions."""
    if overall is not None:
        return overall
    dims = (faithfulness, completeness, conciseness)
    if any(d is None for d in dims):
        raise NoScores("composite needs either an overall score or all three dimensions")
    return sum(dims, start=Fraction(0)) / 3


def score_feedback(feedback: RawFeedback) -> FeedbackScores:
    """Turn a raw feedback payload into scale-tagged exact scores."""
    payload = feedback.payload
    if isinstance(payload, OverallPayload):
        overall = Fraction(payload.overall_likert)
        return FeedbackScores(scale=LIKERT, overall=overall, composite=composite_score(overall=overall))
    if isinstance(payload, DimensionsPayload):
        f = Fraction(payload.faithfulness)
        c = Fraction(payload.completeness)
        z = Fraction(payload.conciseness)
        return FeedbackScores(
            scale=LIKERT,
            faithfulness=f,
            completeness=c,
            conciseness=z,
            composite=composite_score(f, c, z),
        )
    if isinstance(payload, FineGrainedPayload):
        f = faithfulness_score(payload.verdicts)
        c = completeness_score(payload.alignment)
        z = conciseness_score(payload.alignment, len(payload.verdicts))
        return FeedbackScores(
            scale=PERCENT,
            faithfulness=f,
            completeness=c,
            conciseness=z,
            composite=composite_score(f, c, z),
        )
    raise TypeError(f"unknown payload type {type(payload).__name__}")


@dataclass(frozen=True)
class ScoredRecord:
    doc_id: str
    summarizer_id: str
    config: str
    judge_model: str
    scores: FeedbackScores

    def value_for(self, criterion: str) -> Fraction:
        return self.scores.dimension(criterion)


@dataclass(frozen=True)
class AbstractivenessBreakdown:
    n1: Fraction | None
    n3: Fraction | None
    n5: Fraction | None
    score: Fraction

    def to_json(self) -> dict:
        return {
            "n1": None if self.n1 is None else float(self.n1),
            "n3": None if self.n3 is None else float(self.n3),
            "n5": None if self.n5 is None else float(self.n5),
            "score": float(self.score),
        }


def _tokens(text: str) -> list[str]:
    # Lowercase, strip leading/trailing punctuation per token, keep the rest.
    stripped = (word.strip(string.punctuation) for word in text.lower().split())
    return [word for word in stripped if word]


def _ngram_set(tokens: list[str], n: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def abstractiveness_score(document_text: str, summary_text: str) -> AbstractivenessBreakdown:
    """Novel n-gram rates for n in {1, 3, 5} over token sets, averaged.

    An order is undefined when the summary has fewer than n tokens and is
    excluded from the mean; if none is defined the score is 0.
    """
    if not summary_text.strip():
        raise EmptySummary("cannot score abstractiveness of an empty summary")
    doc_tokens = _tokens(document_text)
    summary_tokens = _tokens(summary_text)
    parts: dict[int, Fraction | None] = {}
    for n in (1, 3, 5):
        summary_grams = _ngram_set(summary_tokens, n)
        if not summary_grams:
            parts[n] = None
            continue
        shared = summary_grams & _ngram_set(doc_tokens, n)
        parts[n] = 1 - Fraction(len(shared), len(summary_grams))
    defined = [v for v in parts.values() if v is not None]
    score = sum(defined, start=Fraction(0)) / len(defined) if defined else Fraction(0)
    return AbstractivenessBreakdown(n1=parts[1], n3=parts[3], n5=parts[5], score=score)


_QUANT_EDGES = (
    (1, Fraction(1, 5)),
    (2, Fraction(2, 5)),
    (3, Fraction(3, 5)),
    (4, Fraction(4, 5)),
)


def _exact(value: float | Fraction | int) -> Fraction:
    # Floats are read at their printed decimal value so that 0.6 means 3/5
    # and not the binary float just below it; exact inputs pass through.
    return Fraction(str(value)) if isinstance(value, float) else Fraction(value)


def quantize_percent(p: float | Fraction) -> int:
    """Map a percentage in [0, 1] onto the Likert bins [0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]."""
    exact = _exact(p)
    if exact < 0 or exact > 1:
        raise OutOfRange(f"percentage {p} outside [0, 1]")
    for likert, edge in _QUANT_EDGES:
        if exact < edge:
            return likert
    return 5


def likert_bin(value: float | Fraction) -> int:
    """Nearest Likert bin for a (possibly fractional) Likert-scale value; half rounds up."""
    binned = int(_exact(value) + Fraction(1, 2))
    return min(5, max(1, binned))
