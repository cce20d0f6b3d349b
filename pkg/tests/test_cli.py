"""End-to-end checks of the command-line pipeline against mock backends."""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import golden
import pytest

from sumfeed import (
    DocumentRecord,
    EvaluationUnit,
    KeyFactSet,
    MockFixture,
    SummaryRecord,
    render_prompt,
    write_jsonl,
)
from sumfeed.cli import build_parser, main

ALPHA_TEXT = (
    "The launch happened on Monday morning. It carried two satellites into "
    "orbit. Engineers cheered from the control room."
)
BETA_TEXT = (
    "HOST: Welcome back to the show.</s>GUEST: Thanks for having me. The new "
    "bridge opens in May after years of delays."
)

ALPHA_FACTS = ("The launch happened on Monday", "Two satellites reached orbit")
BETA_FACTS = ("The new bridge opens in May",)

DOCS = {
    "d-alpha": DocumentRecord("d-alpha", "synth", "news", False, ALPHA_TEXT),
    "d-beta": DocumentRecord("d-beta", "synth", "interview", True, BETA_TEXT),
}

REFS = {
    "d-alpha": SummaryRecord("d-alpha", "human", "non_llm", "A Monday launch carried two satellites."),
    "d-beta": SummaryRecord("d-beta", "human", "non_llm", "The bridge opens in May."),
}

CANDIDATES = {
    ("d-alpha", "model-x"): SummaryRecord(
        "d-alpha", "model-x", "proprietary_llm", "The launch carried two satellites into orbit."
    ),
    ("d-alpha", "model-y"): SummaryRecord(
        "d-alpha", "model-y", "open_llm", "A rocket launched. Engineers cheered the event."
    ),
    ("d-beta", "model-x"): SummaryRecord(
        "d-beta", "model-x", "proprietary_llm", "The new bridge opens in May."
    ),
    ("d-beta", "model-y"): SummaryRecord(
        "d-beta", "model-y", "open_llm", "A guest discussed the bridge opening."
    ),
}

SINGLE_SCORES = {
    ("d-alpha", "model-x"): 5,
    ("d-alpha", "model-y"): 3,
    ("d-beta", "model-x"): 4,
    ("d-beta", "model-y"): 2,
}


def _verdicts(summary: SummaryRecord, categories: list[str]) -> list[dict]:
    return [
        {"sentence": sentence, "reason": "checked", "category": category}
        for sentence, category in zip(summary.sentences, categories)
    ]


def _alignment(facts, responses: list[tuple[str, list[int]]]) -> list[dict]:
    return [
        {"key fact": fact, "response": answer, "line number": lines}
        for fact, (answer, lines) in zip(facts, responses)
    ]


# Judge outputs per candidate; composites under c4 are 1, 1/6, 1, and 1/3.
FINEGRAINED = {
    ("d-alpha", "model-x"): (
        ["no error"],
        [("Yes", [1]), ("Yes", [1])],
    ),
    ("d-alpha", "model-y"): (
        ["no error", "out-of-context error"],
        [("No", []), ("No", [])],
    ),
    ("d-beta", "model-x"): (
        ["no error"],
        [("Yes", [1])],
    ),
    ("d-beta", "model-y"): (
        ["entity error"],
        [("Yes", [])],
    ),
}

HUMAN_SCORES = {
    ("d-alpha", "model-x"): 0.9,
    ("d-alpha", "model-y"): 0.3,
    ("d-beta", "model-x"): 0.7,
    ("d-beta", "model-y"): 0.1,
}


def _unit(doc_id: str, summarizer_id: str) -> EvaluationUnit:
    facts = ALPHA_FACTS if doc_id == "d-alpha" else BETA_FACTS
    return EvaluationUnit(
        document=DOCS[doc_id],
        summary=CANDIDATES[(doc_id, summarizer_id)],
        keyfacts=KeyFactSet(doc_id=doc_id, facts=facts, provenance="human"),
    )


def build_fixture() -> MockFixture:
    fixture = MockFixture()
    for doc_id, ref in REFS.items():
        facts = ALPHA_FACTS if doc_id == "d-alpha" else BETA_FACTS
        golden.add_keyfact_extraction(fixture, ref, facts)
    for (doc_id, summarizer_id), score in SINGLE_SCORES.items():
        unit = _unit(doc_id, summarizer_id)
        golden.add_single(fixture, unit, score)
        golden.add_geval(fixture, unit, score, score, score)
        categories, responses = FINEGRAINED[(doc_id, summarizer_id)]
        facts = ALPHA_FACTS if doc_id == "d-alpha" else BETA_FACTS
        golden.add_finegrained(
            fixture, unit, _verdicts(unit.summary, categories), _alignment(facts, responses)
        )
    return fixture


def build_workspace(root: Path) -> dict[str, Path]:
    corpus = root / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    paths = {
        "documents": corpus / "documents.jsonl",
        "summaries": corpus / "summaries.jsonl",
        "summaries_noref": corpus / "summaries_noref.jsonl",
        "keyfacts": corpus / "keyfacts.jsonl",
        "human_scores": corpus / "human_scores.jsonl",
        "fixtures": corpus / "fixtures.json",
    }
    write_jsonl(paths["documents"], DOCS.values())
    write_jsonl(paths["summaries"], list(REFS.values()) + list(CANDIDATES.values()))
    write_jsonl(
        paths["summaries_noref"],
        [REFS["d-alpha"]] + list(CANDIDATES.values()),
    )
    write_jsonl(
        paths["keyfacts"], [KeyFactSet(doc_id="d-alpha", facts=ALPHA_FACTS, provenance="human")]
    )
    write_jsonl(
        paths["human_scores"],
        [
            {"doc_id": doc_id, "summarizer_id": summarizer_id, "score": score}
            for (doc_id, summarizer_id), score in sorted(HUMAN_SCORES.items())
        ],
    )
    build_fixture().save(paths["fixtures"])
    return paths


def base_flags(paths: dict[str, Path], out: Path, keyfacts: bool = True) -> list[str]:
    flags = [
        "--documents", str(paths["documents"]),
        "--summaries", str(paths["summaries"]),
        "--human-scores", str(paths["human_scores"]),
        "--mock-fixtures", str(paths["fixtures"]),
        "--out", str(out),
        "--configs", "c2,c4",
    ]
    if keyfacts:
        flags += ["--keyfacts", str(paths["keyfacts"])]
    return flags


CHAIN = (
    ["ingest"],
    ["keyfacts"],
    ["evaluate"],
    ["score"],
    ["pair"],
    ["export"],
    ["export", "--kind", "sft", "--sft-criterion", "human"],
    ["export", "--kind", "sft", "--sft-criterion", "composite"],
    ["agreement"],
    ["stats"],
)


def run_chain(paths: dict[str, Path], out: Path) -> None:
    for stage in CHAIN:
        code = main(stage + base_flags(paths, out))
        assert code == 0, f"stage {stage[0]} exited {code}"


def read_rows(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    paths = build_workspace(root)
    out = root / "run"
    run_chain(paths, out)
    return paths, out


class TestFullChain:
    def test_artifacts_exist(self, run):
        _, out = run
        expected = [
            "documents.jsonl", "summaries.jsonl", "keyfacts.jsonl", "capacity.jsonl",
            "keyfacts_extracted.jsonl",
            "feedback_c2.jsonl", "feedback_c4.jsonl",
            "scored_c2.jsonl", "scored_c4.jsonl",
            "pairs_c2_composite.jsonl", "pairs_c4_composite.jsonl",
            "train_c2_composite_plain.jsonl", "train_c4_composite_plain.jsonl",
            "sft_human_plain.jsonl",
            "sft_c2_best_composite_plain.jsonl", "sft_c4_best_composite_plain.jsonl",
            "agreement_c2.json", "agreement_c4.json",
            "stats_c2.csv", "stats_c4.csv",
            "manifest.json", "run.log",
        ]
        for name in expected:
            assert (out / name).exists(), f"missing artifact {name}"
        assert not (out / "errors.jsonl").exists()

    def test_keyfacts_only_extracts_missing_docs(self, run):
        _, out = run
        rows = read_rows(out / "keyfacts_extracted.jsonl")
        assert [r["doc_id"] for r in rows] == ["d-beta"]
        assert rows[0]["provenance"] == "extracted"

    def test_feedback_rows_sorted_and_complete(self, run):
        _, out = run
        for config_id in ("c2", "c4"):
            rows = read_rows(out / f"feedback_{config_id}.jsonl")
            keys = [(r["doc_id"], r["summarizer_id"]) for r in rows]
            assert keys == sorted(SINGLE_SCORES)
            assert all(r["config"] == config_id for r in rows)

    def test_scored_values(self, run):
        _, out = run
        rows = {
            (r["doc_id"], r["summarizer_id"]): r for r in read_rows(out / "scored_c4.jsonl")
        }
        composites = {
            key: Fraction(r["scores"]["composite_num"], r["scores"]["composite_den"])
            for key, r in rows.items()
        }
        assert composites == {
            ("d-alpha", "model-x"): Fraction(1),
            ("d-alpha", "model-y"): Fraction(1, 6),
            ("d-beta", "model-x"): Fraction(1),
            ("d-beta", "model-y"): Fraction(1, 3),
        }
        for row in rows.values():
            assert row["scores"]["scale"] == "percent"
            assert set(row["abstractiveness"]) == {"n1", "n3", "n5", "score"}

    def test_pairs_pick_model_x(self, run):
        _, out = run
        for config_id in ("c2", "c4"):
            rows = read_rows(out / f"pairs_{config_id}_composite.jsonl")
            assert [(r["doc_id"], r["chosen"]["summarizer_id"], r["rejected"]["summarizer_id"]) for r in rows] == [
                ("d-alpha", "model-x", "model-y"),
                ("d-beta", "model-x", "model-y"),
            ]

    def test_export_rows(self, run):
        _, out = run
        train = read_rows(out / "train_c4_composite_plain.jsonl")
        assert train[0]["prompt"] == ALPHA_TEXT
        assert train[0]["chosen"] == CANDIDATES[("d-alpha", "model-x")].text
        assert train[0]["rejected"] == CANDIDATES[("d-alpha", "model-y")].text

        sft_human = read_rows(out / "sft_human_plain.jsonl")
        assert [r["response"] for r in sft_human] == [REFS["d-alpha"].text, REFS["d-beta"].text]

        sft_best = read_rows(out / "sft_c4_best_composite_plain.jsonl")
        assert [r["response"] for r in sft_best] == [
            CANDIDATES[("d-alpha", "model-x")].text,
            CANDIDATES[("d-beta", "model-x")].text,
        ]

    def test_agreement_report(self, run):
        _, out = run
        report = json.loads((out / "agreement_c2.json").read_text(encoding="utf-8"))
        assert report["summary_level_rho"] == pytest.approx(1.0)
        assert report["system_level_rho"] == pytest.approx(1.0)
        assert report["n_summaries"] == 4
        assert report["n_systems"] == 2

    def test_stats_csv(self, run):
        _, out = run
        lines = (out / "stats_c2.csv").read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "category,bin,count,percent"
        assert "proprietary_llm,chosen,2,100.0000" in lines
        assert "open_llm,rejected,2,100.0000" in lines

    def test_manifest(self, run):
        _, out = run
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert len(manifest["config_hash"]) == 64
        assert manifest["seed"] == 0
        commands = manifest["commands"]
        assert commands["keyfacts"]["backend_calls"] == 1
        assert commands["evaluate:c2"]["backend_calls"] == 4
        assert commands["evaluate:c4"]["backend_calls"] == 8
        assert commands["ingest"]["documents"] == 2
        assert commands["pair:c2"]["pairs"] == 2

    def test_rerun_makes_no_backend_calls(self, run):
        paths, out = run
        for stage in (["keyfacts"], ["evaluate"]):
            assert main(stage + base_flags(paths, out)) == 0
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["commands"]["keyfacts"]["backend_calls"] == 0
        assert manifest["commands"]["keyfacts"]["skipped"] == 1
        assert manifest["commands"]["evaluate:c2"]["backend_calls"] == 0
        assert manifest["commands"]["evaluate:c2"]["skipped"] == 4
        assert manifest["commands"]["evaluate:c4"]["backend_calls"] == 0
        # The feedback files were not changed by the rerun.
        assert len(read_rows(out / "feedback_c2.jsonl")) == 4


class TestDeterminism:
    def test_same_seed_runs_are_byte_identical(self, tmp_path, monkeypatch):
        paths = build_workspace(tmp_path)
        ini = tmp_path / "run.ini"
        ini.write_text(
            "[paths]\n"
            f"documents = {paths['documents']}\n"
            f"summaries = {paths['summaries']}\n"
            f"keyfacts = {paths['keyfacts']}\n"
            f"human_scores = {paths['human_scores']}\n"
            "out = run\n"
            "[run]\n"
            "configs = c2,c4\n"
            "seed = 11\n"
            f"mock_fixtures = {paths['fixtures']}\n",
            encoding="utf-8",
        )
        outputs = []
        for name in ("work1", "work2"):
            workdir = tmp_path / name
            workdir.mkdir()
            monkeypatch.chdir(workdir)
            for stage in CHAIN:
                assert main(stage + ["--config", str(ini)]) == 0
            outputs.append(workdir / "run")

        first, second = outputs
        names = sorted(p.name for p in first.iterdir())
        assert names == sorted(p.name for p in second.iterdir())
        for name in names:
            if name == "run.log":
                continue  # the log is the one timestamped file
            assert (first / name).read_bytes() == (second / name).read_bytes(), name


class TestSummarize:
    def test_generates_and_resumes(self, tmp_path):
        paths = build_workspace(tmp_path)
        fixture = build_fixture()
        for doc_id, doc in DOCS.items():
            golden.add_generation(fixture, doc, f"A generated summary of {doc_id}.")
        fixture.save(paths["fixtures"])
        out = tmp_path / "run"
        flags = base_flags(paths, out)

        assert main(["ingest"] + flags) == 0
        assert main(["summarize"] + flags) == 0
        rows = read_rows(out / "generated_summaries.jsonl")
        assert [(r["doc_id"], r["summarizer_id"]) for r in rows] == [
            ("d-alpha", "summarizer"),
            ("d-beta", "summarizer"),
        ]
        assert all(r["summarizer_category"] == "open_llm" for r in rows)

        assert main(["summarize"] + flags) == 0
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["commands"]["summarize"]["backend_calls"] == 0
        assert manifest["commands"]["summarize"]["skipped"] == 2


class TestCapacity:
    def test_over_limit_documents_are_skipped(self, tmp_path):
        paths = build_workspace(tmp_path)
        out = tmp_path / "run"
        # d-alpha estimates to 24 tokens and d-beta to 27, so a limit of 24
        # keeps only d-alpha.
        flags = base_flags(paths, out) + ["--capacity-limit", "24"]
        assert main(["ingest"] + flags) == 0
        capacity = {r["doc_id"]: r["kept"] for r in read_rows(out / "capacity.jsonl")}
        assert capacity == {"d-alpha": True, "d-beta": False}

        assert main(["keyfacts"] + flags) == 0
        assert main(["evaluate"] + flags) == 0
        rows = read_rows(out / "feedback_c2.jsonl")
        assert {r["doc_id"] for r in rows} == {"d-alpha"}
        assert not (out / "errors.jsonl").exists()


class TestFailures:
    def test_missing_reference_is_a_unit_failure(self, tmp_path):
        paths = build_workspace(tmp_path)
        out = tmp_path / "run"
        flags = [
            "--documents", str(paths["documents"]),
            "--summaries", str(paths["summaries_noref"]),
            "--mock-fixtures", str(paths["fixtures"]),
            "--out", str(out),
            "--configs", "c4",
        ]
        assert main(["ingest"] + flags) == 0
        assert main(["keyfacts"] + flags) == 2
        errors = read_rows(out / "errors.jsonl")
        assert len(errors) == 1
        assert errors[0]["stage"] == "keyfacts"
        assert errors[0]["doc_id"] == "d-beta"
        assert "no reference summary" in errors[0]["message"]
        # d-alpha was still extracted; the batch was not aborted.
        assert [r["doc_id"] for r in read_rows(out / "keyfacts_extracted.jsonl")] == ["d-alpha"]

    def test_parse_failure_then_resume(self, tmp_path):
        paths = build_workspace(tmp_path)
        fixture = build_fixture()
        broken_unit = _unit("d-alpha", "model-x")
        fixture.add(
            [{"role": "user", "content": render_prompt("single_score", broken_unit)}],
            "no json here",
        )
        fixture.save(paths["fixtures"])
        out = tmp_path / "run"
        flags = base_flags(paths, out)[:-2] + ["--configs", "c2"]

        assert main(["ingest"] + flags) == 0
        assert main(["evaluate"] + flags) == 2
        errors = read_rows(out / "errors.jsonl")
        assert [(e["stage"], e["error"], e["doc_id"]) for e in errors] == [
            ("evaluate:c2", "ParseFailure", "d-alpha")
        ]
        assert len(read_rows(out / "feedback_c2.jsonl")) == 3

        # Repairing the fixture and rerunning finishes just the failed unit.
        build_fixture().save(paths["fixtures"])
        assert main(["evaluate"] + flags) == 0
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["commands"]["evaluate:c2"]["written"] == 1
        assert manifest["commands"]["evaluate:c2"]["skipped"] == 3
        assert len(read_rows(out / "feedback_c2.jsonl")) == 4


class TestExitCodes:
    def test_config_error_is_exit_1(self, tmp_path):
        assert main(["ingest", "--seed", "-1", "--out", str(tmp_path / "x")]) == 1
        assert main(["ingest", "--out", str(tmp_path / "y")]) == 1  # no corpus paths

    def test_missing_artifact_is_exit_3(self, tmp_path):
        out = tmp_path / "fresh"
        assert main(["score", "--out", str(out)]) == 3
        assert (out / "run.log").exists()

    def test_orphan_summaries_are_dropped(self, tmp_path):
        paths = build_workspace(tmp_path)
        orphan = SummaryRecord("d-ghost", "model-x", "proprietary_llm", "Ghost summary.")
        write_jsonl(
            paths["summaries"],
            list(REFS.values()) + list(CANDIDATES.values()) + [orphan],
        )
        out = tmp_path / "run"
        assert main(["ingest"] + base_flags(paths, out)) == 0
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["commands"]["ingest"]["orphan_summaries"] == 1
        assert all(r["doc_id"] != "d-ghost" for r in read_rows(out / "summaries.jsonl"))


class TestParser:
    def test_help_lists_generated_flags(self):
        parser = build_parser()
        sub = parser._subparsers._group_actions[0].choices["evaluate"]
        help_text = sub.format_help()
        assert "--strong-judge-model-id" in help_text
        assert "--config-id" in help_text
        assert "--capacity-limit" in help_text

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_config_id_shorthand(self, tmp_path):
        paths = build_workspace(tmp_path)
        out = tmp_path / "run"
        flags = base_flags(paths, out)[:-2]  # drop --configs
        assert main(["ingest"] + flags + ["--config-id", "c2"]) == 0
        assert main(["keyfacts"] + flags + ["--config-id", "c2"]) == 0
        assert main(["evaluate"] + flags + ["--config-id", "c2"]) == 0
        assert (out / "feedback_c2.jsonl").exists()
        assert not (out / "feedback_c4.jsonl").exists()
