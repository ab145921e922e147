import itertools

import numpy as np
import pytest

from spanqa import evaluation
from spanqa.evaluation import QuestionScore


class TestMatch:
    def test_case_fold(self):
        assert evaluation.match("BRCA1", ["brca1"])

    def test_no_article_stripping(self):
        assert not evaluation.match("the BRCA1", ["BRCA1"])

    def test_edge_punctuation_stripped(self):
        assert evaluation.match("p53.", ["p53"])

    def test_whitespace_normalized(self):
        assert evaluation.match("breast  cancer", ["breast cancer"])

    def test_any_synonym(self):
        assert evaluation.match("gleevec", ["imatinib", "Gleevec"])


class TestScoreFactoid:
    def test_rank_one(self):
        assert evaluation.score_factoid(["p53"], [["p53"]]) == 1.0

    def test_rank_four(self):
        assert evaluation.score_factoid(["a", "b", "c", "p53"], [["p53"]]) == 0.25

    def test_no_match(self):
        assert evaluation.score_factoid(["a", "b", "c", "d", "e"], [["p53"]]) == 0.0

    def test_only_top_five_considered(self):
        ranked = ["a", "b", "c", "d", "e", "p53"]
        assert evaluation.score_factoid(ranked, [["p53"]]) == 0.0

    def test_empty_ranked(self):
        assert evaluation.score_factoid([], [["p53"]]) == 0.0


def brute_force_list_score(predicted, gold):
    """Oracle: maximum matching counted by brute force over injections."""
    if not predicted:
        return 0.0, 0.0, 0.0
    best = 0
    indices = range(len(gold))
    for size in range(min(len(predicted), len(gold)), -1, -1):
        for pred_subset in itertools.permutations(range(len(predicted)), size):
            for gold_subset in itertools.permutations(indices, size):
                if all(
                    evaluation.match(predicted[p], gold[g])
                    for p, g in zip(pred_subset, gold_subset)
                ):
                    best = max(best, size)
        if best:
            break
    precision = best / len(predicted)
    recall = best / len(gold)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


class TestScoreList:
    def test_counting_example(self):
        p, r, f1 = evaluation.score_list(["a", "b", "c"], [["b"], ["c"], ["d"]])
        assert (p, r) == (2 / 3, 2 / 3)
        assert f1 == pytest.approx(2 / 3)

    def test_empty_prediction(self):
        assert evaluation.score_list([], [["x"]]) == (0.0, 0.0, 0.0)

    def test_synonym_credit_no_double_count(self):
        p, r, f1 = evaluation.score_list(["b1"], [["b1", "b2"]])
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_one_gold_one_credit(self):
        # two predictions both matching the same single gold item
        p, r, f1 = evaluation.score_list(["b1", "b2"], [["b1", "b2"]])
        assert p == 0.5
        assert r == 1.0

    def test_empty_gold_rejected(self):
        with pytest.raises(evaluation.UndefinedGoldError):
            evaluation.score_list(["a"], [])

    def test_order_invariance(self):
        gold = [["a"], ["b", "bee"], ["c"]]
        preds = ["c", "x", "bee", "a"]
        base = evaluation.score_list(preds, gold)
        for perm in itertools.permutations(preds):
            assert evaluation.score_list(list(perm), gold) == base

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        universe = ["a", "b", "c", "d"]
        for _ in range(200):
            n_pred = int(rng.integers(0, 5))
            n_gold = int(rng.integers(1, 5))
            predicted = [str(rng.choice(universe)) for _ in range(n_pred)]
            gold = [
                list({str(rng.choice(universe)) for _ in range(int(rng.integers(1, 3)))})
                for _ in range(n_gold)
            ]
            assert evaluation.score_list(predicted, gold) == pytest.approx(
                brute_force_list_score(predicted, gold)
            )

    def test_bounds(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            predicted = [str(rng.integers(0, 5)) for _ in range(int(rng.integers(0, 6)))]
            gold = [[str(rng.integers(0, 5))] for _ in range(int(rng.integers(1, 4)))]
            p, r, f1 = evaluation.score_list(predicted, gold)
            assert 0 <= f1 <= 1
            assert f1 <= min(2 * p, 2 * r) + 1e-12
            assert (f1 == 0) == (p == 0 or r == 0)


class TestBuildReport:
    def test_single_question(self):
        report = evaluation.build_report(
            [QuestionScore("q", "factoid", reciprocal_rank=0.5)]
        )
        assert report.aggregates["factoid_mrr"] == 0.5
        assert report.counts == {"factoid": 1}

    def test_types_partitioned(self):
        scores = [
            QuestionScore("f", "factoid", reciprocal_rank=1.0),
            QuestionScore("l", "list", precision=0.5, recall=0.5, f1=0.5),
        ]
        report = evaluation.build_report(scores)
        assert report.aggregates["factoid_mrr"] == 1.0
        assert report.aggregates["list_f1"] == 0.5

    def test_batch_average_row(self):
        values = [0.520, 0.383, 0.431, 0.300, 0.392]
        scores = [
            QuestionScore(f"q{i}", "factoid", batch=str(i + 1), reciprocal_rank=v)
            for i, v in enumerate(values)
        ]
        report = evaluation.build_report(scores)
        assert len(report.batch_rows) == 5
        assert report.average_row["factoid_mrr"] == pytest.approx(0.4052)
        # matches the published 40.5% to 0.1 percentage points
        assert abs(100 * report.average_row["factoid_mrr"] - 40.5) < 0.1

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError):
            evaluation.build_report([])

    def test_text_table_has_average_row(self):
        scores = [
            QuestionScore("a", "factoid", batch="1", reciprocal_rank=1.0),
            QuestionScore("b", "factoid", batch="2", reciprocal_rank=0.0),
        ]
        text = evaluation.render_text(evaluation.build_report(scores))
        assert "Average" in text
        assert "50.0%" in text

    def test_json_roundtrip(self):
        import json

        scores = [QuestionScore("a", "list", precision=1.0, recall=0.5, f1=2 / 3)]
        payload = json.loads(evaluation.report_to_json(evaluation.build_report(scores)))
        assert payload["aggregates"]["list_f1"] == pytest.approx(2 / 3)
