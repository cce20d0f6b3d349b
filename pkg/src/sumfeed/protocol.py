"""Prompt rendering and judge-response parsing for the four feedback configurations.

c1 and c2 ask for a single overall Likert score (weak vs strong judge), c3
asks for three per-dimension Likert scores, and c4 runs a two-step
fine-grained protocol: a sentence-level fact check plus a key-fact
alignment. Unusable responses are re-asked with the identical prompt up to
MAX_REASKS times, then the unit is excluded via ParseFailure.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Callable, Sequence

from .backend import ChatBackend, extract_json
from .corpus import DocumentRecord, EvaluationUnit, KeyFactSet, SummaryRecord
from .errors import (
    MissingKeyFacts,
    MissingSummary,
    NoJsonFound,
    ParseFailure,
    UnbalancedJson,
)

MAX_REASKS = 3
KEYFACT_CAP = 16

ERROR_CATEGORIES = (
    "no_error",
    "out_of_context",
    "entity",
    "predicate",
    "circumstantial",
    "grammatical",
    "coreference",
    "linking",
    "other",
)


class FeedbackConfigId(str, Enum):
    C1 = "c1"
    C2 = "c2"
    C3 = "c3"
    C4 = "c4"


@dataclass(frozen=True)
class SentenceVerdict:
    """Fact-check outcome for one summary sentence (0-based index)."""

    sentence_index: int
    reason: str
    category: str

    def __post_init__(self):
        if self.category not in ERROR_CATEGORIES:
            raise ValueError(f"unknown error category {self.category!r}")
        if self.sentence_index < 0:
            raise ValueError("sentence_index must be non-negative")

    def to_json(self) -> dict:
        return {
            "sentence_index": self.sentence_index,
            "reason": self.reason,
            "category": self.category,
        }


@dataclass(frozen=True)
class AlignmentEntry:
    """Key-fact alignment outcome for one fact (0-based index, 1-based lines)."""

    keyfact_index: int
    response: str  # "yes" | "no"
    line_numbers: tuple[int, ...] = ()

    def __post_init__(self):
        if self.response not in ("yes", "no"):
            raise ValueError(f"response must be yes or no, got {self.response!r}")
        if self.response == "no" and self.line_numbers:
            raise ValueError("a no response cannot carry line numbers")
        if any(n < 1 for n in self.line_numbers):
            raise ValueError("line numbers are 1-based")
        if self.keyfact_index < 0:
            raise ValueError("keyfact_index must be non-negative")

    def to_json(self) -> dict:
        return {
            "keyfact_index": self.keyfact_index,
            "response": self.response,
            "line_numbers": list(self.line_numbers),
        }


@dataclass(frozen=True)
class OverallPayload:
    overall_likert: int

    def to_json(self) -> dict:
        return {"overall_likert": self.overall_likert}


@dataclass(frozen=True)
class DimensionsPayload:
    faithfulness: int
    completeness: int
    conciseness: int

    def to_json(self) -> dict:
        return {
            "likert_per_dim": [self.faithfulness, self.completeness, self.conciseness]
        }


@dataclass(frozen=True)
class FineGrainedPayload:
    verdicts: tuple[SentenceVerdict, ...]
    alignment: tuple[AlignmentEntry, ...]

    def to_json(self) -> dict:
        return {
            "verdicts": [v.to_json() for v in self.verdicts],
            "alignment": [a.to_json() for a in self.alignment],
        }


Payload = OverallPayload | DimensionsPayload | FineGrainedPayload


@dataclass(frozen=True)
class RawFeedback:
    config: FeedbackConfigId
    doc_id: str
    summarizer_id: str
    judge_model: str
    payload: Payload

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "summarizer_id": self.summarizer_id,
            "config": self.config.value,
            "judge_model": self.judge_model,
            "payload": self.payload.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RawFeedback":
        payload_obj = obj["payload"]
        payload: Payload
        if "overall_likert" in payload_obj:
            payload = OverallPayload(int(payload_obj["overall_likert"]))
        elif "likert_per_dim" in payload_obj:
            f, c, z = payload_obj["likert_per_dim"]
            payload = DimensionsPayload(int(f), int(c), int(z))
        else:
            payload = FineGrainedPayload(
                verdicts=tuple(
                    SentenceVerdict(int(v["sentence_index"]), v.get("reason", ""), v["category"])
                    for v in payload_obj["verdicts"]
                ),
                alignment=tuple(
                    AlignmentEntry(
                        int(a["keyfact_index"]),
                        a["response"],
                        tuple(int(n) for n in a["line_numbers"]),
                    )
                    for a in payload_obj["alignment"]
                ),
            )
        return cls(
            config=FeedbackConfigId(obj["config"]),
            doc_id=obj["doc_id"],
            summarizer_id=obj["summarizer_id"],
            judge_model=obj["judge_model"],
            payload=payload,
        )


PROMPT_TASKS = (
    "single_score",
    "geval_faith",
    "geval_comp",
    "geval_conc",
    "fact_check",
    "keyfact_align",
    "keyfact_extract",
    "summarize",
)


@lru_cache(maxsize=None)
def _load_asset(subdir: str, name: str) -> str:
    return (
        resources.files("sumfeed").joinpath(subdir, name).read_text(encoding="utf-8")
    )


def load_template(name: str) -> str:
    return _load_asset("templates", name + ".txt")


def _fill(template: str, mapping: dict[str, str]) -> str:
    # Plain token replacement; str.format would trip on the JSON braces
    # inside the prompt bodies.
    out = template
    for key, value in mapping.items():
        out = out.replace("{" + key + "}", value)
    return out


def _require_summary(unit: EvaluationUnit) -> SummaryRecord:
    if unit.summary is None:
        raise MissingSummary(f"unit {unit.doc_id} has no summary")
    return unit.summary


def _require_keyfacts(unit: EvaluationUnit) -> KeyFactSet:
    if unit.keyfacts is None:
        raise MissingKeyFacts(f"unit {unit.doc_id} has no key facts")
    return unit.keyfacts


def render_prompt(task: str, unit: EvaluationUnit) -> str:
    """Render the prompt for a task from its packaged template and the unit's fields."""
    if task not in PROMPT_TASKS:
        raise ValueError(f"unknown prompt task {task!r}")
    mapping: dict[str, str] = {
        "document": unit.document.text,
        "source_text": unit.document.text,
    }
    if task in ("single_score", "geval_faith", "geval_comp", "geval_conc", "keyfact_extract"):
        mapping["summary"] = _require_summary(unit).text
    elif task == "fact_check":
        sentences = _require_summary(unit).sentences
        mapping["num_sentences"] = str(len(sentences))
        mapping["sentences"] = "\n".join(sentences)
    elif task == "keyfact_align":
        sentences = _require_summary(unit).sentences
        facts = _require_keyfacts(unit).facts
        mapping["summary"] = "\n".join(sentences)
        mapping["num_keyfacts"] = str(len(facts))
        mapping["keyfacts"] = "\n".join(facts)
    return _fill(_load_asset("prompts", task + ".txt"), mapping)


class _BadResponse(Exception):
    """Internal: the response parsed as text but not as a usable answer."""


def _ask(backend: ChatBackend, prompt: str, parse: Callable[[str], object], what: str):
    messages = [{"role": "user", "content": prompt}]
    last_error: Exception | None = None
    for _ in range(1 + MAX_REASKS):
        exchange = backend.complete(messages)
        if not exchange.ok:
            raise ParseFailure(
                f"{what}: backend gave up after {exchange.attempts} attempts"
            )
        try:
            return parse(exchange.response_text)
        except (_BadResponse, NoJsonFound, UnbalancedJson) as err:
            last_error = err
    raise ParseFailure(f"{what}: {last_error}")


def _coerce_int(value) -> int:
    if isinstance(value, bool):
        raise _BadResponse(f"expected an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value.strip())
        except ValueError:
            raise _BadResponse(f"expected an integer, got {value!r}") from None
    raise _BadResponse(f"expected an integer, got {value!r}")


def _coerce_likert(value) -> int:
    score = _coerce_int(value)
    if not 1 <= score <= 5:
        raise _BadResponse(f"score {score} outside [1, 5]")
    return score


def _parse_single_score(text: str) -> int:
    data = extract_json(text)
    if not isinstance(data, dict) or "score" not in data:
        raise _BadResponse("expected a JSON object with a score key")
    return _coerce_likert(data["score"])


def evaluate_single(
    backend: ChatBackend, unit: EvaluationUnit, config: FeedbackConfigId | str
) -> RawFeedback:
    """Overall Likert judgment (c1 with the weak judge, c2 with the strong one)."""
    config = FeedbackConfigId(config)
    if config not in (FeedbackConfigId.C1, FeedbackConfigId.C2):
        raise ValueError(f"evaluate_single handles c1 and c2 only, got {config.value}")
    summary = _require_summary(unit)
    prompt = render_prompt("single_score", unit)
    score = _ask(backend, prompt, _parse_single_score,
                 what=f"{config.value} {unit.doc_id}/{summary.summarizer_id}")
    return RawFeedback(
        config=config,
        doc_id=unit.doc_id,
        summarizer_id=summary.summarizer_id,
        judge_model=backend.config.model_id,
        payload=OverallPayload(score),
    )


_INTEGER = re.compile(r"\d+")


def _parse_likert_line(text: str) -> int:
    # The form asks for scores only; accept a bare integer or a
    # "- Metric: N" line, the last in-range integer winning.
    hits = [int(m) for m in _INTEGER.findall(text)]
    in_range = [h for h in hits if 1 <= h <= 5]
    if not in_range:
        raise _BadResponse("no integer in [1, 5] found")
    return in_range[-1]


_GEVAL_TASKS = (
    ("geval_faith", "faithfulness"),
    ("geval_comp", "completeness"),
    ("geval_conc", "conciseness"),
)


def evaluate_geval(backend: ChatBackend, unit: EvaluationUnit) -> RawFeedback:
    """Three per-dimension Likert judgments (c3)."""
    summary = _require_summary(unit)
    values: dict[str, int] = {}
    for task, dim in _GEVAL_TASKS:
        prompt = render_prompt(task, unit)
        values[dim] = _ask(backend, prompt, _parse_likert_line,
                           what=f"c3 {dim} {unit.doc_id}/{summary.summarizer_id}")
    return RawFeedback(
        config=FeedbackConfigId.C3,
        doc_id=unit.doc_id,
        summarizer_id=summary.summarizer_id,
        judge_model=backend.config.model_id,
        payload=DimensionsPayload(**values),
    )


_CATEGORY_ALIASES = {
    "no": "no_error",
    "out_of_context": "out_of_context",
    "entity": "entity",
    "predicate": "predicate",
    "circumstantial": "circumstantial",
    "grammatical": "grammatical",
    "coreference": "coreference",
    "linking": "linking",
    "other": "other",
}


def _normalize_category(value) -> str:
    if not isinstance(value, str):
        raise _BadResponse(f"category must be a string, got {value!r}")
    label = value.strip().lower()
    if label.endswith("error"):
        label = label[: -len("error")]
    label = label.strip(" -_").replace("-", "_").replace(" ", "_")
    if label not in _CATEGORY_ALIASES:
        raise _BadResponse(f"unknown error category {value!r}")
    return _CATEGORY_ALIASES[label]


def _parse_verdicts(text: str, sentence_count: int) -> tuple[SentenceVerdict, ...]:
    data = extract_json(text)
    if not isinstance(data, list):
        raise _BadResponse("expected a JSON list of verdicts")
    if len(data) != sentence_count:
        raise _BadResponse(
            f"expected {sentence_count} verdicts, got {len(data)}"
        )
    verdicts = []
    # Verdicts are matched to sentences by position, not by echoed text.
    for index, item in enumerate(data):
        if not isinstance(item, dict):
            raise _BadResponse(f"verdict {index} is not an object")
        reason = item.get("reason", "")
        if not isinstance(reason, str):
            reason = ""
        verdicts.append(
            SentenceVerdict(index, reason, _normalize_category(item.get("category")))
        )
    return tuple(verdicts)


def _parse_alignment(
    text: str, fact_count: int, sentence_count: int
) -> tuple[AlignmentEntry, ...]:
    data = extract_json(text)
    if not isinstance(data, list):
        raise _BadResponse("expected a JSON list of alignments")
    if len(data) != fact_count:
        raise _BadResponse(f"expected {fact_count} alignments, got {len(data)}")
    entries = []
    for index, item in enumerate(data):
        if not isinstance(item, dict):
            raise _BadResponse(f"alignment {index} is not an object")
        response = item.get("response")
        if not isinstance(response, str) or response.strip().lower() not in ("yes", "no"):
            raise _BadResponse(f"alignment {index} has no yes/no response")
        response = response.strip().lower()
        lines: set[int] = set()
        if response == "yes":
            raw = item.get("line number", item.get("line numbers", item.get("line_numbers", [])))
            if not isinstance(raw, list):
                raw = [raw]
            for value in raw:
                try:
                    number = _coerce_int(value)
                except _BadResponse:
                    continue
                # Citations outside [1, N] are dropped, not fatal.
                if 1 <= number <= sentence_count:
                    lines.add(number)
        entries.append(AlignmentEntry(index, response, tuple(sorted(lines))))
    return tuple(entries)


def evaluate_finegrained(backend: ChatBackend, unit: EvaluationUnit) -> RawFeedback:
    """Sentence-level fact check plus key-fact alignment (c4)."""
    summary = _require_summary(unit)
    facts = _require_keyfacts(unit)
    n = len(summary.sentences)
    m = len(facts.facts)
    who = f"{unit.doc_id}/{summary.summarizer_id}"
    verdicts = _ask(
        backend,
        render_prompt("fact_check", unit),
        lambda text: _parse_verdicts(text, n),
        what=f"c4 fact_check {who}",
    )
    alignment = _ask(
        backend,
        render_prompt("keyfact_align", unit),
        lambda text: _parse_alignment(text, m, n),
        what=f"c4 keyfact_align {who}",
    )
    return RawFeedback(
        config=FeedbackConfigId.C4,
        doc_id=unit.doc_id,
        summarizer_id=summary.summarizer_id,
        judge_model=backend.config.model_id,
        payload=FineGrainedPayload(verdicts, alignment),
    )


def _parse_keyfacts(text: str) -> tuple[str, ...]:
    data = extract_json(text)
    if not isinstance(data, dict):
        raise _BadResponse("expected a JSON object with a key facts list")
    raw = data.get("key facts", data.get("key_facts"))
    if not isinstance(raw, list):
        raise _BadResponse("expected a key facts list")
    facts = [f.strip() for f in raw if isinstance(f, str) and f.strip()]
    if not facts:
        raise _BadResponse("empty key-fact list")
    return tuple(facts[:KEYFACT_CAP])


def extract_keyfacts(
    backend: ChatBackend, doc_id: str, reference_summary: str
) -> KeyFactSet:
    """Decompose a reference summary into at most KEYFACT_CAP key facts."""
    if not reference_summary.strip():
        raise MissingSummary(f"document {doc_id} has an empty reference summary")
    prompt = _fill(_load_asset("prompts", "keyfact_extract.txt"), {"summary": reference_summary})
    facts = _ask(backend, prompt, _parse_keyfacts, what=f"keyfacts {doc_id}")
    return KeyFactSet(doc_id=doc_id, facts=facts, provenance="extracted")


def _parse_summary_text(text: str) -> str:
    data = extract_json(text)
    if not isinstance(data, dict):
        raise _BadResponse("expected a JSON object with a summary key")
    summary = data.get("summary")
    if not isinstance(summary, str) or not summary.strip():
        raise _BadResponse("summary must be a non-empty string")
    return summary.strip()


def generate_summary(
    backend: ChatBackend, document: DocumentRecord, category: str = "open_llm"
) -> SummaryRecord:
    """Generate a summary of the document with the backend's model."""
    prompt = _fill(_load_asset("prompts", "summarize.txt"), {"document": document.text})
    text = _ask(backend, prompt, _parse_summary_text, what=f"summarize {document.doc_id}")
    return SummaryRecord(
        doc_id=document.doc_id,
        summarizer_id=backend.config.model_id,
        summarizer_category=category,
        text=text,
    )
