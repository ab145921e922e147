"""Challenge metrics: mean reciprocal rank for factoid questions and
precision / recall / F1 for list questions, plus a batch-style report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .textnorm import normalize_answer

MAX_FACTOID_RANK = 5


class UndefinedGoldError(ValueError):
    pass


@dataclass
class QuestionScore:
    question_ref: str
    qtype: str
    batch: str | None = None
    reciprocal_rank: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None


@dataclass
class EvaluationReport:
    scores: list[QuestionScore]
    counts: dict[str, int]
    aggregates: dict[str, float]
    batch_rows: list[dict] = field(default_factory=list)
    average_row: dict | None = None


def match(predicted: str, gold_synonyms: list[str]) -> bool:
    """Normalized string equality against any synonym of one gold item."""
    p = normalize_answer(predicted)
    return any(p == normalize_answer(g) for g in gold_synonyms)


def score_factoid(ranked: list[str], gold: list[list[str]]) -> float:
    """1/rank of the first match within the top five, else 0."""
    for rank, answer in enumerate(ranked[:MAX_FACTOID_RANK], start=1):
        if any(match(answer, synonyms) for synonyms in gold):
            return 1.0 / rank
    return 0.0


def score_list(predicted: list[str], gold: list[list[str]]) -> tuple[float, float, float]:
    """Precision, recall, F1 with one-gold-one-credit matching.

    A gold item is covered if any of its synonyms matches a prediction, and
    each gold item credits at most one prediction (maximum bipartite
    matching between predictions and gold items).
    """
    if not gold:
        raise UndefinedGoldError("list question without gold answers")
    if not predicted:
        return 0.0, 0.0, 0.0
    compatible = np.array(
        [[match(p, synonyms) for synonyms in gold] for p in predicted], dtype=float
    )
    rows, cols = linear_sum_assignment(compatible, maximize=True)
    matched = int(compatible[rows, cols].sum())
    precision = matched / len(predicted)
    recall = matched / len(gold)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def build_report(scores: list[QuestionScore]) -> EvaluationReport:
    """Aggregate per-question scores into per-type means and, when batch tags
    are present, one row per batch plus an Average row over batches."""
    if not scores:
        raise ValueError("no scores to report")
    factoid = [s for s in scores if s.qtype == "factoid"]
    listq = [s for s in scores if s.qtype == "list"]
    counts: dict[str, int] = {}
    for s in scores:
        counts[s.qtype] = counts.get(s.qtype, 0) + 1
    aggregates = {
        "factoid_mrr": _mean([s.reciprocal_rank for s in factoid]),
        "list_precision": _mean([s.precision for s in listq]),
        "list_recall": _mean([s.recall for s in listq]),
        "list_f1": _mean([s.f1 for s in listq]),
    }
    batch_rows = []
    average_row = None
    batches = sorted({s.batch for s in scores if s.batch is not None})
    if batches:
        for b in batches:
            batch_rows.append(
                {
                    "batch": b,
                    "factoid_mrr": _mean(
                        [s.reciprocal_rank for s in factoid if s.batch == b]
                    ),
                    "list_f1": _mean([s.f1 for s in listq if s.batch == b]),
                }
            )
        average_row = {
            "batch": "Average",
            "factoid_mrr": _mean(
                [r["factoid_mrr"] for r in batch_rows if r["factoid_mrr"] is not None]
            ),
            "list_f1": _mean(
                [r["list_f1"] for r in batch_rows if r["list_f1"] is not None]
            ),
        }
    return EvaluationReport(
        scores=scores,
        counts=counts,
        aggregates=aggregates,
        batch_rows=batch_rows,
        average_row=average_row,
    )


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:5.1f}%"


def render_text(report: EvaluationReport) -> str:
    """Aligned plain-text table: one row per batch (or one overall row) and
    an Average row when batches are present."""
    lines = [f"{'Batch':<10}{'Factoid MRR':>14}{'List F1':>10}"]
    rows = report.batch_rows or [
        {
            "batch": "all",
            "factoid_mrr": report.aggregates["factoid_mrr"],
            "list_f1": report.aggregates["list_f1"],
        }
    ]
    for row in rows:
        lines.append(
            f"{row['batch']:<10}{_pct(row['factoid_mrr']):>14}{_pct(row['list_f1']):>10}"
        )
    if report.average_row:
        r = report.average_row
        lines.append(f"{r['batch']:<10}{_pct(r['factoid_mrr']):>14}{_pct(r['list_f1']):>10}")
    counts = ", ".join(f"{k}={v}" for k, v in sorted(report.counts.items()))
    lines.append(f"questions: {counts}")
    return "\n".join(lines)


def report_to_json(report: EvaluationReport) -> str:
    payload = {
        "aggregates": report.aggregates,
        "counts": report.counts,
        "batch_rows": report.batch_rows,
        "average_row": report.average_row,
        "per_question": [
            {
                "id": s.question_ref,
                "qtype": s.qtype,
                "batch": s.batch,
                "reciprocal_rank": s.reciprocal_rank,
                "precision": s.precision,
                "recall": s.recall,
                "f1": s.f1,
            }
            for s in report.scores
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)
