"""Exception types shared across the package.

Everything raised on purpose derives from SumfeedError so callers can catch
one base; ConfigError is reserved for problems a user fixes by editing
configuration rather than data.
"""

from __future__ import annotations


class SumfeedError(Exception):
    """Base class for all package errors."""


class ConfigError(SumfeedError):
    """Invalid or missing configuration (bad URL, unset key env var, bad flag)."""


class MalformedLine(SumfeedError):
    """A JSONL line failed to parse as JSON."""

    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: not valid JSON{': ' + detail if detail else ''}")


class SchemaViolation(SumfeedError):
    """A JSONL record is missing a field or carries a wrong-typed value."""

    def __init__(self, line_no: int, field: str, detail: str = ""):
        self.line_no = line_no
        self.field = field
        super().__init__(
            f"line {line_no}: bad field {field!r}{': ' + detail if detail else ''}"
        )


class DuplicateId(SumfeedError):
    """The same doc_id appeared twice in a documents file."""

    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"duplicate doc_id {doc_id!r}")


class NoJsonFound(SumfeedError):
    """No JSON object or array region exists in the text."""


class UnbalancedJson(SumfeedError):
    """A JSON region opens but never closes."""


class FixtureMiss(SumfeedError):
    """A mock backend received a request its fixture does not cover."""

    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(f"no canned response for request fingerprint {fingerprint}")


class ParseFailure(SumfeedError):
    """A judge response stayed unusable after all re-asks; the unit is excluded."""


class MissingSummary(SumfeedError):
    """The operation needs a summary the unit does not carry."""


class MissingKeyFacts(SumfeedError):
    """The operation needs a key-fact set the unit does not carry."""


class EmptySummary(SumfeedError):
    """A summary with zero sentences (or zero tokens) cannot be scored."""


class EmptyKeyFacts(SumfeedError):
    """A key-fact set with zero facts cannot be scored."""


class NoScores(SumfeedError):
    """A record lacks the score dimension the caller asked for."""


class OutOfRange(SumfeedError):
    """A numeric value falls outside its documented domain."""


class MixedScales(SumfeedError):
    """Records on different score scales cannot be combined."""


class MixedConfigs(SumfeedError):
    """Records from different feedback configurations cannot be combined."""


class NoCandidates(SumfeedError):
    """No candidate satisfies the selection criterion."""


class LengthMismatch(SumfeedError):
    """Two paired series differ in length."""


class TooFewPoints(SumfeedError):
    """A correlation needs at least two paired points."""


class TooFewSystems(SumfeedError):
    """System-level agreement needs at least two systems."""


class InsufficientOverlap(SumfeedError):
    """The two score series share fewer than two keys."""
