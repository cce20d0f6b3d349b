"""Batch stages behind the CLI: ingest through stats.

Every stage writes deterministic artifacts under the run directory; only
run.log carries timestamps. Stages that call a backend are resumable: keys
already present in the output file are skipped, so an immediate rerun makes
zero backend calls. Per-unit failures are appended to errors.jsonl and
surface as exit code 2; they never abort the batch.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .agreement import ScoreSeries, agreement_report, distribution_stats
from .backend import ChatBackend, HttpBackend, MockBackend, MockFixture
from .config import SFT_CRITERION_ALIASES, PipelineConfig, config_hash
from .corpus import (
    DocumentRecord,
    EvaluationUnit,
    KeyFactSet,
    SummaryRecord,
    estimate_tokens,
    filter_by_capacity,
    load_documents,
    load_keyfacts,
    load_summaries,
    write_jsonl,
)
from .errors import ConfigError, SumfeedError
from .pairing import (
    PairPolicy,
    PreferencePair,
    SftCandidate,
    build_pairs,
    downsample,
    export_pairs,
    export_sft,
    select_sft_reference,
)
from .protocol import (
    RawFeedback,
    evaluate_finegrained,
    evaluate_geval,
    evaluate_single,
    extract_keyfacts,
    generate_summary,
)
from .scoring import FeedbackScores, ScoredRecord, abstractiveness_score, score_feedback


@dataclass
class RunContext:
    config: PipelineConfig
    out: Path
    log: logging.Logger
    export_kind: str = "pairs"
    sft_criterion: str = "composite"
    failures: int = 0
    _backends: dict = field(default_factory=dict)
    _manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        manifest_path = self.out / "manifest.json"
        if manifest_path.exists():
            self._manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        self._manifest["config_hash"] = config_hash(self.config)
        self._manifest["seed"] = self.config.seed
        self._manifest.setdefault("commands", {})

    def backend(self, role: str) -> ChatBackend:
        if role not in self._backends:
            backend_config = getattr(self.config, role)
            if self.config.mock_fixtures:
                fixture = MockFixture.load(self.config.mock_fixtures)
                self._backends[role] = MockBackend(fixture, config=backend_config)
            else:
                self._backends[role] = HttpBackend(backend_config)
        return self._backends[role]

    def record_failures(self, stage: str, entries: Sequence[tuple[str, str, str, Exception]]):
        """Append unit failures to errors.jsonl in a deterministic order."""
        if not entries:
            return
        rows = sorted(
            (
                {
                    "stage": stage,
                    "doc_id": doc_id,
                    "summarizer_id": summarizer_id,
                    "config": config_id,
                    "error": type(err).__name__,
                    "message": str(err),
                }
                for doc_id, summarizer_id, config_id, err in entries
            ),
            key=lambda r: (r["doc_id"], r["summarizer_id"], r["config"]),
        )
        with (self.out / "errors.jsonl").open("a", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
                self.log.warning(
                    "%s failed for %s/%s (%s): %s",
                    stage, row["doc_id"], row["summarizer_id"], row["error"], row["message"],
                )
        self.failures += len(rows)

    def note(self, command: str, **stats):
        self._manifest["commands"][command] = dict(sorted(stats.items()))

    def flush_manifest(self):
        payload = json.dumps(self._manifest, ensure_ascii=False, sort_keys=True, indent=2)
        (self.out / "manifest.json").write_text(payload + "\n", encoding="utf-8")


def _read_rows(path: Path) -> list[dict]:
    rows = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _require_artifact(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise SumfeedError(f"{path.name} not found; run the {produced_by} stage first")
    return path


def _existing_keys(path: Path, fields: tuple[str, ...]) -> set[tuple]:
    if not path.exists():
        return set()
    return {tuple(row[f] for f in fields) for row in _read_rows(path)}


def _append_jsonl(path: Path, rows: Iterable[dict]):
    with path.open("a", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def _run_parallel(units: Sequence, work: Callable, max_workers: int):
    """Run work over units; returns (results, failures) with unit-level errors caught."""
    results: list[tuple[object, object]] = []
    failures: list[tuple[object, Exception]] = []
    if not units:
        return results, failures
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(work, unit): unit for unit in units}
        for future in as_completed(futures):
            unit = futures[future]
            try:
                results.append((unit, future.result()))
            except SumfeedError as err:
                failures.append((unit, err))
    return results, failures


# ---------------------------------------------------------------- corpora

def _normalized_documents(ctx: RunContext) -> list[DocumentRecord]:
    return load_documents(_require_artifact(ctx.out / "documents.jsonl", "ingest"))


def _kept_doc_ids(ctx: RunContext, documents: Sequence[DocumentRecord]) -> set[str]:
    units = [EvaluationUnit(document=d) for d in documents]
    kept, _ = filter_by_capacity(units, ctx.config.capacity_limit)
    return {u.doc_id for u in kept}


def _all_summaries(ctx: RunContext) -> list[SummaryRecord]:
    summaries = load_summaries(_require_artifact(ctx.out / "summaries.jsonl", "ingest"))
    generated = ctx.out / "generated_summaries.jsonl"
    if generated.exists():
        seen = {(s.doc_id, s.summarizer_id) for s in summaries}
        for record in load_summaries(generated):
            if (record.doc_id, record.summarizer_id) not in seen:
                summaries.append(record)
    return summaries


def _keyfact_map(ctx: RunContext) -> dict[str, KeyFactSet]:
    facts: dict[str, KeyFactSet] = {}
    extracted = ctx.out / "keyfacts_extracted.jsonl"
    if extracted.exists():
        for record in load_keyfacts(extracted):
            facts[record.doc_id] = record
    provided = ctx.out / "keyfacts.jsonl"
    if provided.exists():
        for record in load_keyfacts(provided):
            facts[record.doc_id] = record  # provided facts win over extracted
    return facts


def _working_units(ctx: RunContext) -> list[EvaluationUnit]:
    """Evaluation units: candidate summaries joined to capacity-kept documents."""
    documents = _normalized_documents(ctx)
    doc_map = {d.doc_id: d for d in documents}
    kept = _kept_doc_ids(ctx, documents)
    keyfacts = _keyfact_map(ctx)
    units = []
    for summary in _all_summaries(ctx):
        if summary.summarizer_id == ctx.config.reference_summarizer:
            continue
        if summary.doc_id not in doc_map or summary.doc_id not in kept:
            continue
        units.append(
            EvaluationUnit(
                document=doc_map[summary.doc_id],
                summary=summary,
                keyfacts=keyfacts.get(summary.doc_id),
            )
        )
    units.sort(key=lambda u: (u.doc_id, u.summary.summarizer_id))
    return units


# ---------------------------------------------------------------- stages

def run_ingest(ctx: RunContext):
    cfg = ctx.config
    if not cfg.documents or not cfg.summaries:
        raise ConfigError("ingest needs documents and summaries paths")
    documents = load_documents(cfg.documents)
    summaries = load_summaries(cfg.summaries)
    keyfacts = load_keyfacts(cfg.keyfacts) if cfg.keyfacts else []

    doc_ids = {d.doc_id for d in documents}
    known, orphans = [], 0
    for summary in summaries:
        if summary.doc_id in doc_ids:
            known.append(summary)
        else:
            orphans += 1
            ctx.log.warning(
                "summary %s/%s references an unknown document; skipped",
                summary.doc_id, summary.summarizer_id,
            )

    write_jsonl(ctx.out / "documents.jsonl", documents)
    write_jsonl(ctx.out / "summaries.jsonl", known)
    if keyfacts:
        write_jsonl(ctx.out / "keyfacts.jsonl", (k for k in keyfacts if k.doc_id in doc_ids))

    units = [EvaluationUnit(document=d) for d in documents]
    kept, dropped = filter_by_capacity(units, cfg.capacity_limit)
    kept_ids = {u.doc_id for u in kept}
    report = [
        {
            "doc_id": u.doc_id,
            "estimated_tokens": estimate_tokens(u.document.text),
            "kept": u.doc_id in kept_ids,
        }
        for u in units
    ]
    write_jsonl(ctx.out / "capacity.jsonl", report)
    ctx.log.info(
        "ingest: %d documents (%d kept), %d summaries, %d key-fact sets, %d orphans",
        len(documents), len(kept), len(known), len(keyfacts), orphans,
    )
    ctx.note(
        "ingest",
        documents=len(documents),
        summaries=len(known),
        keyfacts=len(keyfacts),
        kept=len(kept),
        dropped=len(dropped),
        orphan_summaries=orphans,
    )


def run_keyfacts(ctx: RunContext):
    documents = _normalized_documents(ctx)
    kept = _kept_doc_ids(ctx, documents)
    references = {
        s.doc_id: s
        for s in _all_summaries(ctx)
        if s.summarizer_id == ctx.config.reference_summarizer
    }
    provided = set()
    provided_path = ctx.out / "keyfacts.jsonl"
    if provided_path.exists():
        provided = {k.doc_id for k in load_keyfacts(provided_path)}

    out_path = ctx.out / "keyfacts_extracted.jsonl"
    done = {key[0] for key in _existing_keys(out_path, ("doc_id",))}
    backend = ctx.backend("strong_judge")

    todo, missing_ref = [], []
    for document in documents:
        if document.doc_id not in kept or document.doc_id in provided or document.doc_id in done:
            continue
        if document.doc_id not in references:
            missing_ref.append((document.doc_id, "", "", SumfeedError("no reference summary to extract key facts from")))
            continue
        todo.append(document)

    calls_before = backend.calls
    results, failures = _run_parallel(
        todo,
        lambda d: extract_keyfacts(backend, d.doc_id, references[d.doc_id].text),
        ctx.config.strong_judge.max_in_flight,
    )
    new_facts = sorted((facts for _, facts in results), key=lambda k: k.doc_id)
    _append_jsonl(out_path, (k.to_json() for k in new_facts))

    ctx.record_failures(
        "keyfacts",
        missing_ref + [(d.doc_id, "", "", err) for d, err in failures],
    )
    ctx.log.info("keyfacts: %d extracted, %d skipped, %d failed", len(new_facts), len(done), len(failures) + len(missing_ref))
    ctx.note(
        "keyfacts",
        backend_calls=backend.calls - calls_before,
        written=len(new_facts),
        skipped=len(done),
        failed=len(failures) + len(missing_ref),
    )


def run_summarize(ctx: RunContext):
    documents = _normalized_documents(ctx)
    kept = _kept_doc_ids(ctx, documents)
    backend = ctx.backend("summarizer")
    out_path = ctx.out / "generated_summaries.jsonl"
    done = _existing_keys(out_path, ("doc_id", "summarizer_id"))
    model_id = ctx.config.summarizer.model_id

    todo = [
        d for d in documents
        if d.doc_id in kept and (d.doc_id, model_id) not in done
    ]
    calls_before = backend.calls
    results, failures = _run_parallel(
        todo,
        lambda d: generate_summary(backend, d, ctx.config.generated_category),
        ctx.config.summarizer.max_in_flight,
    )
    new_summaries = sorted((s for _, s in results), key=lambda s: s.doc_id)
    _append_jsonl(out_path, (s.to_json() for s in new_summaries))

    ctx.record_failures("summarize", [(d.doc_id, model_id, "", err) for d, err in failures])
    ctx.log.info("summarize: %d written, %d skipped, %d failed", len(new_summaries), len(done), len(failures))
    ctx.note(
        "summarize",
        backend_calls=backend.calls - calls_before,
        written=len(new_summaries),
        skipped=len(done),
        failed=len(failures),
    )


_EVALUATORS = {
    "c1": lambda backend, unit: evaluate_single(backend, unit, "c1"),
    "c2": lambda backend, unit: evaluate_single(backend, unit, "c2"),
    "c3": evaluate_geval,
    "c4": evaluate_finegrained,
}


def run_evaluate(ctx: RunContext):
    units = _working_units(ctx)
    for config_id in ctx.config.configs:
        role = "weak_judge" if config_id == "c1" else "strong_judge"
        backend = ctx.backend(role)
        out_path = ctx.out / f"feedback_{config_id}.jsonl"
        done = _existing_keys(out_path, ("doc_id", "summarizer_id"))
        todo = [
            u for u in units
            if (u.doc_id, u.summary.summarizer_id) not in done
        ]
        evaluator = _EVALUATORS[config_id]
        calls_before = backend.calls
        results, failures = _run_parallel(
            todo,
            lambda u: evaluator(backend, u),
            getattr(ctx.config, role).max_in_flight,
        )
        feedback = sorted(
            (fb for _, fb in results), key=lambda f: (f.doc_id, f.summarizer_id)
        )
        _append_jsonl(out_path, (f.to_json() for f in feedback))

        ctx.record_failures(
            f"evaluate:{config_id}",
            [(u.doc_id, u.summary.summarizer_id, config_id, err) for u, err in failures],
        )
        ctx.log.info(
            "evaluate %s: %d written, %d skipped, %d failed",
            config_id, len(feedback), len(done), len(failures),
        )
        ctx.note(
            f"evaluate:{config_id}",
            backend_calls=backend.calls - calls_before,
            written=len(feedback),
            skipped=len(done),
            failed=len(failures),
        )


def run_score(ctx: RunContext):
    documents = {d.doc_id: d for d in _normalized_documents(ctx)}
    summaries = {(s.doc_id, s.summarizer_id): s for s in _all_summaries(ctx)}
    for config_id in ctx.config.configs:
        feedback_path = _require_artifact(ctx.out / f"feedback_{config_id}.jsonl", "evaluate")
        rows = _read_rows(feedback_path)
        scored_rows, failures = [], []
        for row in rows:
            feedback = RawFeedback.from_json(row)
            key = (feedback.doc_id, feedback.summarizer_id)
            try:
                scores = score_feedback(feedback)
                summary = summaries.get(key)
                document = documents.get(feedback.doc_id)
                if summary is None or document is None:
                    raise SumfeedError("feedback references a record missing from the corpus")
                abstractiveness = abstractiveness_score(document.text, summary.text)
            except SumfeedError as err:
                failures.append((feedback.doc_id, feedback.summarizer_id, config_id, err))
                continue
            scored_rows.append(
                dict(row, scores=scores.to_json(), abstractiveness=abstractiveness.to_json())
            )
        write_jsonl(ctx.out / f"scored_{config_id}.jsonl", scored_rows)
        ctx.record_failures(f"score:{config_id}", failures)
        ctx.log.info("score %s: %d scored, %d failed", config_id, len(scored_rows), len(failures))
        ctx.note(f"score:{config_id}", written=len(scored_rows), failed=len(failures))


def load_scored(path: Path) -> list[ScoredRecord]:
    records = []
    for row in _read_rows(path):
        records.append(
            ScoredRecord(
                doc_id=row["doc_id"],
                summarizer_id=row["summarizer_id"],
                config=row["config"],
                judge_model=row["judge_model"],
                scores=FeedbackScores.from_json(row["scores"]),
            )
        )
    return records


def _pairs_path(ctx: RunContext, config_id: str) -> Path:
    return ctx.out / f"pairs_{config_id}_{ctx.config.criterion}.jsonl"


def run_pair(ctx: RunContext):
    policy = PairPolicy(
        criterion=ctx.config.criterion,
        chosen_min=ctx.config.threshold("chosen_min"),
        min_gap=ctx.config.threshold("min_gap"),
        target_size=ctx.config.target_size,
        seed=ctx.config.seed,
        max_pairs_per_doc=ctx.config.max_pairs_per_doc,
    )
    for config_id in ctx.config.configs:
        records = load_scored(_require_artifact(ctx.out / f"scored_{config_id}.jsonl", "score"))
        pairs = downsample(build_pairs(records, policy), policy.target_size, policy.seed)
        write_jsonl(_pairs_path(ctx, config_id), pairs)
        ctx.log.info("pair %s: %d pairs (criterion %s)", config_id, len(pairs), policy.criterion)
        ctx.note(f"pair:{config_id}", pairs=len(pairs), criterion=policy.criterion)


def run_export(ctx: RunContext):
    cfg = ctx.config
    documents = {d.doc_id: d for d in _normalized_documents(ctx)}
    summaries = {(s.doc_id, s.summarizer_id): s for s in _all_summaries(ctx)}
    tokens = dict(
        begin_token=cfg.begin_token, end_token=cfg.end_token, response_token=cfg.response_token
    )
    if ctx.export_kind == "pairs":
        for config_id in cfg.configs:
            pairs_path = _require_artifact(_pairs_path(ctx, config_id), "pair")
            pairs = [PreferencePair.from_json(row) for row in _read_rows(pairs_path)]
            rows = export_pairs(pairs, documents, summaries, cfg.format, **tokens)
            out_path = ctx.out / f"train_{config_id}_{cfg.criterion}_{cfg.format}.jsonl"
            write_jsonl(out_path, rows)
            ctx.log.info("export pairs %s: %d rows -> %s", config_id, len(rows), out_path.name)
            ctx.note(f"export:pairs:{config_id}", rows=len(rows), format=cfg.format)
        return

    criterion = SFT_CRITERION_ALIASES[ctx.sft_criterion]
    reference_id = cfg.reference_summarizer
    by_doc: dict[str, list[SftCandidate]] = {}
    if criterion == "human":
        for (doc_id, summarizer_id), summary in summaries.items():
            if summarizer_id == reference_id and doc_id in documents:
                by_doc.setdefault(doc_id, []).append(SftCandidate(summary, is_reference=True))
        config_ids = [None]
    else:
        config_ids = list(cfg.configs)

    for config_id in config_ids:
        if config_id is not None:
            scored = load_scored(_require_artifact(ctx.out / f"scored_{config_id}.jsonl", "score"))
            by_doc = {}
            for record in scored:
                summary = summaries.get((record.doc_id, record.summarizer_id))
                if summary is None:
                    continue
                by_doc.setdefault(record.doc_id, []).append(
                    SftCandidate(summary, scores=record.scores)
                )
        selections, failures = [], []
        for doc_id in sorted(by_doc):
            try:
                selections.append(select_sft_reference(by_doc[doc_id], criterion))
            except SumfeedError as err:
                failures.append((doc_id, "", config_id or "", err))
        rows = export_sft(selections, documents, summaries, cfg.format, **tokens)
        stem = f"sft_{criterion}_{cfg.format}" if config_id is None else f"sft_{config_id}_{criterion}_{cfg.format}"
        write_jsonl(ctx.out / f"{stem}.jsonl", rows)
        ctx.record_failures("export:sft", failures)
        ctx.log.info("export sft (%s): %d rows", criterion, len(rows))
        ctx.note(f"export:sft:{config_id or 'corpus'}", rows=len(rows), criterion=criterion)


def run_agreement(ctx: RunContext):
    if not ctx.config.human_scores:
        raise ConfigError("agreement needs a human_scores path")
    human = ScoreSeries.from_rows(_read_rows(Path(ctx.config.human_scores)))
    for config_id in ctx.config.configs:
        records = load_scored(_require_artifact(ctx.out / f"scored_{config_id}.jsonl", "score"))
        pred = ScoreSeries.from_records(records, "composite")
        report = agreement_report(pred, human)
        out_path = ctx.out / f"agreement_{config_id}.json"
        out_path.write_text(
            json.dumps(report.to_json(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        ctx.log.info(
            "agreement %s: summary rho %.4f, system rho %.4f",
            config_id, report.summary_level_rho, report.system_level_rho,
        )
        ctx.note(
            f"agreement:{config_id}",
            n_summaries=report.n_summaries,
            n_systems=report.n_systems,
        )


def run_stats(ctx: RunContext):
    categories = {s.summarizer_id: s.summarizer_category for s in _all_summaries(ctx)}
    for config_id in ctx.config.configs:
        records = load_scored(_require_artifact(ctx.out / f"scored_{config_id}.jsonl", "score"))
        pairs_path = _pairs_path(ctx, config_id)
        pairs = (
            [PreferencePair.from_json(row) for row in _read_rows(pairs_path)]
            if pairs_path.exists()
            else []
        )
        stats = distribution_stats(records, categories, pairs)
        out_path = ctx.out / f"stats_{config_id}.csv"
        out_path.write_text(stats.to_csv(), encoding="utf-8")
        ctx.log.info("stats %s: %d rows -> %s", config_id, len(stats.rows()), out_path.name)
        ctx.note(f"stats:{config_id}", rows=len(stats.rows()))


COMMANDS = {
    "ingest": run_ingest,
    "keyfacts": run_keyfacts,
    "summarize": run_summarize,
    "evaluate": run_evaluate,
    "score": run_score,
    "pair": run_pair,
    "export": run_export,
    "agreement": run_agreement,
    "stats": run_stats,
}
