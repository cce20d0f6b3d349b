"""Typed corpus records, JSONL loading, sentence splitting, and capacity filtering.

Input files are JSON Lines, one object per line, UTF-8. Loaders validate
against the record schemas and report 1-based line numbers on failure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import DuplicateId, MalformedLine, SchemaViolation

SUMMARIZER_CATEGORIES = ("non_llm", "open_llm", "proprietary_llm")
KEYFACT_PROVENANCES = ("extracted", "human")

# Tokens whose trailing period never ends a sentence.
_ABBREVIATIONS = frozenset(
    {"Dr.", "Mr.", "Mrs.", "Ms.", "etc.", "e.g.", "i.e.", "vs.", "U.S."}
)
_TERMINATORS = ".!?"
_OPENING_PUNCT = "\"'([{<"


def split_sentences(text: str) -> tuple[str, ...]:
    """Split text into sentences with a deterministic rule-based scanner.

    A boundary is a '.', '!' or '?' followed by whitespace and then an
    uppercase letter or digit; a newline is always a hard boundary. A period
    that completes a known abbreviation never splits. Sentences are returned
    stripped of surrounding whitespace; empty segments are dropped.
    """
    sentences: list[str] = []
    for line in text.split("\n"):
        sentences.extend(_split_line(line))
    return tuple(sentences)


def _split_line(line: str) -> list[str]:
    out: list[str] = []
    start = 0
    for i, ch in enumerate(line):
        if ch in _TERMINATORS and _starts_new_sentence(line, i) and not _ends_abbreviation(line, i):
            piece = line[start : i + 1].strip()
            if piece:
                out.append(piece)
            start = i + 1
    tail = line[start:].strip()
    if tail:
        out.append(tail)
    return out


def _starts_new_sentence(line: str, i: int) -> bool:
    j = i + 1
    if j >= len(line) or not line[j].isspace():
        return False
    while j < len(line) and line[j].isspace():
        j += 1
    return j < len(line) and (line[j].isupper() or line[j].isdigit())


def _ends_abbreviation(line: str, i: int) -> bool:
    if line[i] != ".":
        return False
    k = i
    while k > 0 and not line[k - 1].isspace():
        k -= 1
    token = line[k : i + 1].lstrip(_OPENING_PUNCT)
    return token in _ABBREVIATIONS


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    source_dataset: str
    domain: str
    dialogue: bool
    text: str

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.text:
            raise ValueError(f"document {self.doc_id!r} has empty text")

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_dataset": self.source_dataset,
            "domain": self.domain,
            "dialogue": self.dialogue,
            "text": self.text,
        }


@dataclass(frozen=True)
class SummaryRecord:
    doc_id: str
    summarizer_id: str
    summarizer_category: str
    text: str

    def __post_init__(self):
        if not self.doc_id or not self.summarizer_id:
            raise ValueError("doc_id and summarizer_id must be non-empty")
        if self.summarizer_category not in SUMMARIZER_CATEGORIES:
            raise ValueError(f"unknown summarizer_category {self.summarizer_category!r}")
        if not self.text:
            raise ValueError(f"summary {self.doc_id}/{self.summarizer_id} has empty text")

    @cached_property
    def sentences(self) -> tuple[str, ...]:
        return split_sentences(self.text)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "summarizer_id": self.summarizer_id,
            "summarizer_category": self.summarizer_category,
            "text": self.text,
        }


@dataclass(frozen=True)
class KeyFactSet:
    doc_id: str
    facts: tuple[str, ...]
    provenance: str

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.facts or any(not f for f in self.facts):
            raise ValueError(f"key facts for {self.doc_id!r} must be non-empty strings")
        if self.provenance not in KEYFACT_PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "facts": list(self.facts),
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class EvaluationUnit:
    """A document joined with the summary under judgment and its key facts."""

    document: DocumentRecord
    summary: SummaryRecord | None = None
    keyfacts: KeyFactSet | None = None

    def __post_init__(self):
        if self.summary is not None and self.summary.doc_id != self.document.doc_id:
            raise ValueError(
                f"summary doc_id {self.summary.doc_id!r} does not match "
                f"document {self.document.doc_id!r}"
            )
        if self.keyfacts is not None and self.keyfacts.doc_id != self.document.doc_id:
            raise ValueError(
                f"keyfacts doc_id {self.keyfacts.doc_id!r} does not match "
                f"document {self.document.doc_id!r}"
            )

    @property
    def doc_id(self) -> str:
        return self.document.doc_id


def _field(obj: dict, line_no: int, name: str, typ: type):
    if name not in obj:
        raise SchemaViolation(line_no, name, "missing")
    value = obj[name]
    if typ is bool:
        if not isinstance(value, bool):
            raise SchemaViolation(line_no, name, "expected a boolean")
    elif typ is str:
        if not isinstance(value, str) or isinstance(value, bool):
            raise SchemaViolation(line_no, name, "expected a string")
    elif typ is list:
        if not isinstance(value, list):
            raise SchemaViolation(line_no, name, "expected a list")
    return value


def _iter_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise MalformedLine(line_no, str(err)) from err
            if not isinstance(obj, dict):
                raise MalformedLine(line_no, "expected a JSON object")
            yield line_no, obj


def load_documents(path: str | Path) -> list[DocumentRecord]:
    records: list[DocumentRecord] = []
    seen: set[str] = set()
    for line_no, obj in _iter_jsonl(Path(path)):
        doc_id = _field(obj, line_no, "doc_id", str)
        if doc_id in seen:
            raise DuplicateId(doc_id)
        seen.add(doc_id)
        text = _field(obj, line_no, "text", str)
        if not doc_id or not text:
            raise SchemaViolation(line_no, "doc_id" if not doc_id else "text", "empty")
        records.append(
            DocumentRecord(
                doc_id=doc_id,
                source_dataset=_field(obj, line_no, "source_dataset", str),
                domain=_field(obj, line_no, "domain", str),
                dialogue=_field(obj, line_no, "dialogue", bool),
                text=text,
            )
        )
    return records


def load_summaries(path: str | Path) -> list[SummaryRecord]:
    records: list[SummaryRecord] = []
    for line_no, obj in _iter_jsonl(Path(path)):
        category = _field(obj, line_no, "summarizer_category", str)
        if category not in SUMMARIZER_CATEGORIES:
            raise SchemaViolation(line_no, "summarizer_category", f"unknown value {category!r}")
        doc_id = _field(obj, line_no, "doc_id", str)
        summarizer_id = _field(obj, line_no, "summarizer_id", str)
        text = _field(obj, line_no, "text", str)
        if not doc_id or not summarizer_id or not text:
            empty = "doc_id" if not doc_id else ("summarizer_id" if not summarizer_id else "text")
            raise SchemaViolation(line_no, empty, "empty")
        records.append(
            SummaryRecord(
                doc_id=doc_id,
                summarizer_id=summarizer_id,
                summarizer_category=category,
                text=text,
            )
        )
    return records


def load_keyfacts(path: str | Path) -> list[KeyFactSet]:
    records: list[KeyFactSet] = []
    for line_no, obj in _iter_jsonl(Path(path)):
        provenance = _field(obj, line_no, "provenance", str)
        if provenance not in KEYFACT_PROVENANCES:
            raise SchemaViolation(line_no, "provenance", f"unknown value {provenance!r}")
        facts = _field(obj, line_no, "facts", list)
        if not facts or any(not isinstance(f, str) or not f for f in facts):
            raise SchemaViolation(line_no, "facts", "expected a non-empty list of non-empty strings")
        doc_id = _field(obj, line_no, "doc_id", str)
        if not doc_id:
            raise SchemaViolation(line_no, "doc_id", "empty")
        records.append(KeyFactSet(doc_id=doc_id, facts=tuple(facts), provenance=provenance))
    return records


_LOADERS = {
    "documents": load_documents,
    "summaries": load_summaries,
    "keyfacts": load_keyfacts,
}


def load_corpus(path: str | Path, kind: str) -> list:
    """Load one corpus file of the given kind: documents, summaries, or keyfacts."""
    if kind not in _LOADERS:
        raise ValueError(f"unknown corpus kind {kind!r}")
    return _LOADERS[kind](path)


def write_jsonl(path: str | Path, rows: Iterable) -> int:
    """Write records (or plain dicts) as sorted-key JSONL. Returns the row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            obj = row.to_json() if hasattr(row, "to_json") else row
            handle.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
            count += 1
    return count


def estimate_tokens(text: str) -> int:
    """Default token estimate: ceil(word count * 4 / 3) over whitespace words."""
    return math.ceil(len(text.split()) * 4 / 3)


def filter_by_capacity(
    units: Sequence[EvaluationUnit],
    limit_tokens: int = 8192,
    estimator: Callable[[str], int] = estimate_tokens,
) -> tuple[list[EvaluationUnit], list[EvaluationUnit]]:
    """Partition units into (kept, dropped) by document token estimate, preserving order."""
    kept: list[EvaluationUnit] = []
    dropped: list[EvaluationUnit] = []
    for unit in units:
        target = kept if estimator(unit.document.text) <= limit_tokens else dropped
        target.append(unit)
    return kept, dropped
