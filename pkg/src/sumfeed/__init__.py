"""Multi-dimensional judge feedback over document/summary corpora.

The package turns document-summary pairs into structured judge feedback
(four evaluation configurations), exact-fraction metric scores, preference
pairs, SFT reference selections, training-ready JSONL, and rank-agreement
reports. `sumfeed.cli:main` exposes the same stages as a CLI.
"""

from __future__ import annotations

from .agreement import (
    AgreementReport,
    DistributionStats,
    ScoreSeries,
    agreement_report,
    average_ranks,
    distribution_stats,
    rank_systems,
    spearman,
)
from .backend import (
    DEFAULT_API_KEY_ENV,
    BackendConfig,
    ChatBackend,
    ChatExchange,
    HttpBackend,
    MockBackend,
    MockFixture,
    extract_json,
    fingerprint_messages,
)
from .config import CONFIG_IDS, PipelineConfig, config_hash, load_config
from .corpus import (
    DocumentRecord,
    EvaluationUnit,
    KeyFactSet,
    SummaryRecord,
    estimate_tokens,
    filter_by_capacity,
    load_corpus,
    load_documents,
    load_keyfacts,
    load_summaries,
    split_sentences,
    write_jsonl,
)
from .errors import (
    ConfigError,
    FixtureMiss,
    MalformedLine,
    NoJsonFound,
    ParseFailure,
    SchemaViolation,
    SumfeedError,
    UnbalancedJson,
)
from .pairing import (
    EXPORT_FORMATS,
    SFT_CRITERIA,
    PairPolicy,
    PreferencePair,
    SftCandidate,
    SftSelection,
    build_pairs,
    downsample,
    export_pairs,
    export_sft,
    format_prompt,
    format_response,
    select_sft_reference,
)
from .protocol import (
    ERROR_CATEGORIES,
    AlignmentEntry,
    DimensionsPayload,
    FineGrainedPayload,
    OverallPayload,
    RawFeedback,
    SentenceVerdict,
    evaluate_finegrained,
    evaluate_geval,
    evaluate_single,
    extract_keyfacts,
    generate_summary,
    render_prompt,
)
from .scoring import (
    CRITERIA,
    AbstractivenessBreakdown,
    FeedbackScores,
    ScoredRecord,
    abstractiveness_score,
    completeness_score,
    composite_score,
    conciseness_score,
    faithfulness_score,
    likert_bin,
    quantize_percent,
    score_feedback,
)

__version__ = "0.1.0"

__all__ = [
    "AgreementReport",
    "AbstractivenessBreakdown",
    "AlignmentEntry",
    "BackendConfig",
    "CONFIG_IDS",
    "CRITERIA",
    "ChatBackend",
    "ChatExchange",
    "ConfigError",
    "DEFAULT_API_KEY_ENV",
    "DimensionsPayload",
    "DistributionStats",
    "DocumentRecord",
    "ERROR_CATEGORIES",
    "EXPORT_FORMATS",
    "EvaluationUnit",
    "FeedbackScores",
    "FineGrainedPayload",
    "FixtureMiss",
    "HttpBackend",
    "KeyFactSet",
    "MalformedLine",
    "MockBackend",
    "MockFixture",
    "NoJsonFound",
    "OverallPayload",
    "PairPolicy",
    "ParseFailure",
    "PipelineConfig",
    "PreferencePair",
    "RawFeedback",
    "SFT_CRITERIA",
    "SchemaViolation",
    "ScoreSeries",
    "ScoredRecord",
    "SentenceVerdict",
    "SftCandidate",
    "SftSelection",
    "SumfeedError",
    "SummaryRecord",
    "UnbalancedJson",
    "abstractiveness_score",
    "agreement_report",
    "average_ranks",
    "build_pairs",
    "completeness_score",
    "composite_score",
    "conciseness_score",
    "config_hash",
    "distribution_stats",
    "downsample",
    "estimate_tokens",
    "evaluate_finegrained",
    "evaluate_geval",
    "evaluate_single",
    "export_pairs",
    "export_sft",
    "extract_json",
    "extract_keyfacts",
    "faithfulness_score",
    "filter_by_capacity",
    "fingerprint_messages",
    "format_prompt",
    "format_response",
    "generate_summary",
    "likert_bin",
    "load_config",
    "load_corpus",
    "load_documents",
    "load_keyfacts",
    "load_summaries",
    "quantize_percent",
    "rank_systems",
    "render_prompt",
    "score_feedback",
    "select_sft_reference",
    "spearman",
    "split_sentences",
    "write_jsonl",
]
