from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sumfeed import (
    ScoredRecord,
    ScoreSeries,
    agreement_report,
    average_ranks,
    distribution_stats,
    rank_systems,
    spearman,
)
from sumfeed.errors import InsufficientOverlap, LengthMismatch, TooFewPoints, TooFewSystems
from sumfeed.pairing import PairSide, PreferencePair
from sumfeed.scoring import LIKERT, PERCENT, FeedbackScores


class TestAverageRanks:
    def test_distinct_values(self):
        assert average_ranks([10, 30, 20]) == [1.0, 3.0, 2.0]

    def test_ties_share_average_position(self):
        assert average_ranks([1, 2, 2, 3]) == [1.0, 2.5, 2.5, 4.0]
        assert average_ranks([5, 5, 5]) == [2.0, 2.0, 2.0]

    def test_empty(self):
        assert average_ranks([]) == []


class TestSpearman:
    def test_perfect_agreement(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_perfect_disagreement(self):
        assert spearman([1, 2, 3], [9, 5, 1]) == pytest.approx(-1.0)

    def test_monotone_transform_invariant(self):
        xs = [0.1, 0.5, 0.2, 0.9]
        assert spearman(xs, [x**3 for x in xs]) == pytest.approx(1.0)

    def test_hand_computed_with_tie(self):
        # ranks x: [1, 2.5, 2.5, 4]; ranks y: [2, 1, 3, 4] -> rho = 0.6324555...
        xs = [1, 2, 2, 3]
        ys = [5, 1, 7, 9]
        assert spearman(xs, ys) == pytest.approx(0.6324555320336759)

    def test_constant_series_is_zero(self):
        assert spearman([1, 1, 1], [1, 2, 3]) == 0.0
        assert spearman([1, 2, 3], [7, 7, 7]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            spearman([1, 2], [1, 2, 3])

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            spearman([1], [1])

    @given(
        st.lists(st.integers(min_value=0, max_value=5), min_size=2, max_size=30).flatmap(
            lambda xs: st.tuples(
                st.just(xs),
                st.lists(
                    st.integers(min_value=0, max_value=5),
                    min_size=len(xs), max_size=len(xs),
                ),
            )
        )
    )
    def test_bounded_and_symmetric(self, pair):
        xs, ys = pair
        rho = spearman(xs, ys)
        assert -1.0 - 1e-12 <= rho <= 1.0 + 1e-12
        assert spearman(ys, xs) == pytest.approx(rho)


class TestRankSystems:
    def test_distinct(self):
        assert rank_systems([0.3, 0.1, 0.2]) == [3, 1, 2]

    def test_ties_share_maximal_count(self):
        assert rank_systems([0.5, 0.5, 0.1]) == [3, 3, 1]

    def test_all_equal(self):
        assert rank_systems([2, 2, 2, 2]) == [4, 4, 4, 4]


def _series(rows):
    return ScoreSeries(
        keys=tuple((doc, system) for doc, system, _ in rows),
        values=tuple(value for _, _, value in rows),
    )


class TestScoreSeries:
    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            ScoreSeries(keys=(("d", "m"),), values=(1.0, 2.0))

    def test_duplicate_keys_rejected(self):
        with pytest.raises(ValueError):
            ScoreSeries(keys=(("d", "m"), ("d", "m")), values=(1.0, 2.0))

    def test_from_rows(self):
        series = ScoreSeries.from_rows(
            [{"doc_id": "d", "summarizer_id": "m", "score": 3}]
        )
        assert series.keys == (("d", "m"),)
        assert series.values == (3.0,)

    def test_from_records(self):
        record = ScoredRecord(
            "d", "m", "c1", "j",
            FeedbackScores(scale=LIKERT, composite=Fraction(4), overall=Fraction(4)),
        )
        series = ScoreSeries.from_records([record])
        assert series.values == (4.0,)


class TestAgreementReport:
    def test_self_agreement_is_one(self):
        series = _series(
            [
                ("d1", "a", 0.9), ("d1", "b", 0.2),
                ("d2", "a", 0.7), ("d2", "b", 0.4),
                ("d3", "a", 0.6), ("d3", "b", 0.1),
            ]
        )
        report = agreement_report(series, series)
        assert report.summary_level_rho == pytest.approx(1.0)
        assert report.system_level_rho == pytest.approx(1.0)
        assert report.n_summaries == 6
        assert report.n_systems == 2

    def test_intersection_only(self):
        pred = _series([("d1", "a", 0.9), ("d2", "a", 0.1), ("dX", "a", 0.5)])
        human = _series([("d1", "a", 1.0), ("d2", "a", 0.0), ("dY", "a", 0.5)])
        report = agreement_report(pred, human, system_of={("d1", "a"): "s1", ("d2", "a"): "s2"})
        assert report.n_summaries == 2

    def test_insufficient_overlap(self):
        pred = _series([("d1", "a", 0.9)])
        human = _series([("d2", "a", 0.9)])
        with pytest.raises(InsufficientOverlap):
            agreement_report(pred, human)

    def test_too_few_systems(self):
        pred = _series([("d1", "a", 0.9), ("d2", "a", 0.1)])
        human = _series([("d1", "a", 0.9), ("d2", "a", 0.1)])
        with pytest.raises(TooFewSystems):
            agreement_report(pred, human)

    def test_custom_system_grouping(self):
        pred = _series([("d1", "a", 0.9), ("d2", "a", 0.1)])
        human = _series([("d1", "a", 0.8), ("d2", "a", 0.2)])
        report = agreement_report(
            pred, human, system_of={("d1", "a"): "s1", ("d2", "a"): "s2"}
        )
        assert report.n_systems == 2
        assert report.system_level_rho == pytest.approx(1.0)

    def test_json_fields(self):
        series = _series([("d1", "a", 0.9), ("d1", "b", 0.2), ("d2", "a", 0.7), ("d2", "b", 0.4)])
        obj = agreement_report(series, series).to_json()
        assert set(obj) == {"summary_level_rho", "system_level_rho", "n_summaries", "n_systems"}


class TestDistributionStats:
    def _record(self, doc_id, summarizer_id, composite, scale=PERCENT):
        if scale == PERCENT:
            scores = FeedbackScores(scale=PERCENT, composite=Fraction(composite))
        else:
            scores = FeedbackScores(
                scale=LIKERT, composite=Fraction(composite), overall=Fraction(composite)
            )
        return ScoredRecord(doc_id, summarizer_id, "c4", "j", scores)

    def test_percent_histogram_uses_quantized_bins(self):
        records = [
            self._record("d1", "a", Fraction(9, 10)),
            self._record("d2", "a", Fraction(1, 10)),
            self._record("d3", "a", Fraction(85, 100)),
        ]
        stats = distribution_stats(records, {"a": "open_llm"})
        counts = {(c, b): n for c, b, n in stats.histograms}
        assert counts[("open_llm", 5)] == 2
        assert counts[("open_llm", 1)] == 1
        assert sum(counts.values()) == 3

    def test_likert_histogram_uses_rounded_bins(self):
        records = [
            self._record("d1", "a", 4, scale=LIKERT),
            self._record("d2", "a", Fraction(7, 2), scale=LIKERT),
        ]
        stats = distribution_stats(records, {"a": "open_llm"})
        counts = {(c, b): n for c, b, n in stats.histograms}
        assert counts[("open_llm", 4)] == 2

    def test_roles_count_pair_membership(self):
        records = [
            self._record("d1", "a", Fraction(9, 10)),
            self._record("d1", "b", Fraction(1, 10)),
            self._record("d2", "a", Fraction(9, 10)),
        ]
        pairs = [
            PreferencePair(
                doc_id="d1", config="c4", criterion="composite",
                chosen=PairSide("a", Fraction(9, 10)),
                rejected=PairSide("b", Fraction(1, 10)),
            )
        ]
        stats = distribution_stats(
            records, {"a": "proprietary_llm", "b": "open_llm"}, pairs
        )
        roles = {(c, r): (n, pool) for c, r, n, pool in stats.roles}
        assert roles[("proprietary_llm", "chosen")] == (1, 2)
        assert roles[("proprietary_llm", "rejected")] == (0, 2)
        assert roles[("open_llm", "rejected")] == (1, 1)

    def test_csv_shape(self):
        records = [self._record("d1", "a", Fraction(9, 10))]
        csv = distribution_stats(records, {"a": "open_llm"}).to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "category,bin,count,percent"
        assert len(lines) == 1 + 5 + 2  # header + five bins + two roles
        assert lines[5] == "open_llm,5,1,100.0000"
