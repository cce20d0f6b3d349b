"""Preference-pair construction, downsampling, SFT reference selection, and export.

Pairs are built per document from scored records of a single configuration:
the chosen side must clear an absolute threshold and beat the rejected side
by a minimum gap, both fixed per scale unless overridden. Output order is
canonical (doc_id, chosen id, rejected id) so runs are reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .corpus import DocumentRecord, SummaryRecord
from .errors import MixedConfigs, MixedScales, NoCandidates
from .protocol import load_template
from .scoring import CRITERIA, LIKERT, PERCENT, FeedbackScores, ScoredRecord

LIKERT_CHOSEN_MIN = Fraction(4)
LIKERT_MIN_GAP = Fraction(1)
PERCENT_CHOSEN_MIN = Fraction(4, 5)
PERCENT_MIN_GAP = Fraction(1, 5)

SFT_CRITERIA = ("human", "best_composite", "best_faith", "best_comp", "best_conc")

_SFT_FIELD = {
    "best_composite": "composite",
    "best_faith": "faithfulness",
    "best_comp": "completeness",
    "best_conc": "conciseness",
}

EXPORT_FORMATS = ("plain", "instruct_wrapped")


@dataclass(frozen=True)
class PairPolicy:
    criterion: str = "composite"
    chosen_min: Fraction | None = None  # None means the scale default
    min_gap: Fraction | None = None
    target_size: int | None = None
    seed: int = 0
    max_pairs_per_doc: int | None = None

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.target_size is not None and self.target_size < 1:
            raise ValueError("target_size must be at least 1")
        if self.max_pairs_per_doc is not None and self.max_pairs_per_doc < 1:
            raise ValueError("max_pairs_per_doc must be at least 1")

    def thresholds_for(self, scale: str) -> tuple[Fraction, Fraction]:
        if scale == PERCENT:
            defaults = (PERCENT_CHOSEN_MIN, PERCENT_MIN_GAP)
        elif scale == LIKERT:
            defaults = (LIKERT_CHOSEN_MIN, LIKERT_MIN_GAP)
        else:
            raise ValueError(f"unknown scale {scale!r}")
        chosen_min = defaults[0] if self.chosen_min is None else self.chosen_min
        min_gap = defaults[1] if self.min_gap is None else self.min_gap
        return chosen_min, min_gap


@dataclass(frozen=True)
class PairSide:
    summarizer_id: str
    score: Fraction

    def to_json(self) -> dict:
        return {
            "summarizer_id": self.summarizer_id,
            "score": float(self.score),
            "score_num": self.score.numerator,
            "score_den": self.score.denominator,
        }


@dataclass(frozen=True)
class PreferencePair:
    doc_id: str
    config: str
    criterion: str
    chosen: PairSide
    rejected: PairSide

    def __post_init__(self):
        if self.chosen.summarizer_id == self.rejected.summarizer_id:
            raise ValueError("chosen and rejected must come from different summarizers")

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "config": self.config,
            "criterion": self.criterion,
            "chosen": self.chosen.to_json(),
            "rejected": self.rejected.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PreferencePair":
        def side(part: dict) -> PairSide:
            return PairSide(
                summarizer_id=part["summarizer_id"],
                score=Fraction(part["score_num"], part["score_den"]),
            )

        return cls(
            doc_id=obj["doc_id"],
            config=obj["config"],
            criterion=obj["criterion"],
            chosen=side(obj["chosen"]),
            rejected=side(obj["rejected"]),
        )


def build_pairs(records: Sequence[ScoredRecord], policy: PairPolicy) -> list[PreferencePair]:
    """All valid (chosen, rejected) ordered pairs per document, canonically ordered."""
    if not records:
        return []
    scales = {r.scores.scale for r in records}
    if len(scales) > 1:
        raise MixedScales(f"records mix scales {sorted(scales)}")
    configs = {r.config for r in records}
    if len(configs) > 1:
        raise MixedConfigs(f"records mix configurations {sorted(configs)}")
    chosen_min, min_gap = policy.thresholds_for(scales.pop())
    config = configs.pop()

    by_doc: dict[str, list[ScoredRecord]] = {}
    for record in records:
        by_doc.setdefault(record.doc_id, []).append(record)

    pairs: list[PreferencePair] = []
    for doc_id in sorted(by_doc):
        group = by_doc[doc_id]
        doc_pairs: list[PreferencePair] = []
        for chosen in group:
            chosen_value = chosen.value_for(policy.criterion)
            if chosen_value < chosen_min:
                continue
            for rejected in group:
                if rejected.summarizer_id == chosen.summarizer_id:
                    continue
                rejected_value = rejected.value_for(policy.criterion)
                if chosen_value - rejected_value >= min_gap:
                    doc_pairs.append(
                        PreferencePair(
                            doc_id=doc_id,
                            config=config,
                            criterion=policy.criterion,
                            chosen=PairSide(chosen.summarizer_id, chosen_value),
                            rejected=PairSide(rejected.summarizer_id, rejected_value),
                        )
                    )
        doc_pairs.sort(key=lambda p: (p.chosen.summarizer_id, p.rejected.summarizer_id))
        if policy.max_pairs_per_doc is not None and len(doc_pairs) > policy.max_pairs_per_doc:
            rng = random.Random(f"{policy.seed}:{doc_id}")
            picked = sorted(rng.sample(range(len(doc_pairs)), policy.max_pairs_per_doc))
            doc_pairs = [doc_pairs[i] for i in picked]
        pairs.extend(doc_pairs)
    return pairs


def downsample(
    pairs: Sequence[PreferencePair], target_size: int | None, seed: int
) -> list[PreferencePair]:
    """Uniform random subset without replacement, preserving the incoming order."""
    if target_size is None or len(pairs) <= target_size:
        return list(pairs)
    rng = random.Random(seed)
    picked = sorted(rng.sample(range(len(pairs)), target_size))
    return [pairs[i] for i in picked]


@dataclass(frozen=True)
class SftCandidate:
    summary: SummaryRecord
    scores: FeedbackScores | None = None
    is_reference: bool = False


@dataclass(frozen=True)
class SftSelection:
    doc_id: str
    summarizer_id: str
    criterion: str

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "summarizer_id": self.summarizer_id,
            "criterion": self.criterion,
        }


def select_sft_reference(candidates: Sequence[SftCandidate], criterion: str) -> SftSelection:
    """Pick the reference summary for SFT under the given criterion.

    Ties on the criterion break by higher faithfulness, then fewer summary
    sentences, then lexicographically smaller summarizer_id.
    """
    if criterion not in SFT_CRITERIA:
        raise ValueError(f"unknown SFT criterion {criterion!r}")
    if not candidates:
        raise NoCandidates("no candidate summaries")
    doc_id = candidates[0].summary.doc_id

    if criterion == "human":
        refs = sorted(
            (c for c in candidates if c.is_reference),
            key=lambda c: c.summary.summarizer_id,
        )
        if not refs:
            raise NoCandidates(f"document {doc_id} has no human reference summary")
        return SftSelection(doc_id, refs[0].summary.summarizer_id, criterion)

    field = _SFT_FIELD[criterion]
    scored = [c for c in candidates if c.scores is not None and not c.is_reference]
    if not scored:
        raise NoCandidates(f"document {doc_id} has no scored candidates")

    def sort_key(candidate: SftCandidate):
        value = candidate.scores.dimension(field)
        faith = candidate.scores.faithfulness
        if faith is None:
            faith = Fraction(-1)  # no signal: every candidate ties here
        return (-value, -faith, len(candidate.summary.sentences), candidate.summary.summarizer_id)

    best = min(scored, key=sort_key)
    return SftSelection(doc_id, best.summary.summarizer_id, criterion)


def format_prompt(
    document_text: str, fmt: str, begin_token: str = "", end_token: str = ""
) -> str:
    if fmt == "plain":
        return document_text
    if fmt == "instruct_wrapped":
        template = load_template("instruct_wrapped")
        return (
            template.replace("{begin_token}", begin_token)
            .replace("{document}", document_text)
            .replace("{end_token}", end_token)
        )
    raise ValueError(f"unknown export format {fmt!r}")


def format_response(
    summary_text: str, fmt: str, response_token: str = "", end_token: str = ""
) -> str:
    if fmt == "plain":
        return summary_text
    if fmt == "instruct_wrapped":
        return f"{response_token}{summary_text}{end_token}"
    raise ValueError(f"unknown export format {fmt!r}")


def export_pairs(
    pairs: Sequence[PreferencePair],
    documents: Mapping[str, DocumentRecord],
    summaries: Mapping[tuple[str, str], SummaryRecord],
    fmt: str = "plain",
    begin_token: str = "",
    end_token: str = "",
    response_token: str = "",
) -> list[dict]:
    """Training-ready rows {doc_id, prompt, chosen, rejected}."""
    rows = []
    for pair in pairs:
        document = documents[pair.doc_id]
        chosen = summaries[(pair.doc_id, pair.chosen.summarizer_id)]
        rejected = summaries[(pair.doc_id, pair.rejected.summarizer_id)]
        rows.append(
            {
                "doc_id": pair.doc_id,
                "prompt": format_prompt(document.text, fmt, begin_token, end_token),
                "chosen": format_response(chosen.text, fmt, response_token, end_token),
                "rejected": format_response(rejected.text, fmt, response_token, end_token),
            }
        )
    return rows


def export_sft(
    selections: Sequence[SftSelection],
    documents: Mapping[str, DocumentRecord],
    summaries: Mapping[tuple[str, str], SummaryRecord],
    fmt: str = "plain",
    begin_token: str = "",
    end_token: str = "",
    response_token: str = "",
) -> list[dict]:
    """Training-ready rows {doc_id, prompt, response}."""
    rows = []
    for selection in selections:
        document = documents[selection.doc_id]
        summary = summaries[(selection.doc_id, selection.summarizer_id)]
        rows.append(
            {
                "doc_id": selection.doc_id,
                "prompt": format_prompt(document.text, fmt, begin_token, end_token),
                "response": format_response(summary.text, fmt, response_token, end_token),
            }
        )
    return rows
