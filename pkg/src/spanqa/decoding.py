"""From span distributions to answers.

Per-snippet beam search, global aggregation across snippets, duplicate
removal, top-5 factoid ranking, threshold-based list answering with a
dev-tuned cutoff, score-level ensembling, and the constant yes/no baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Question, Span, TokenizedContext, split_windows, tokenize
from .corpus import EmptyContextError
from .evaluation import score_list
from .network import ScoreTable, SpanDistribution, output_layer
from .textnorm import normalize_answer

DEFAULT_BEAM = 20
DEFAULT_CANDIDATE_CAP = 20
FACTOID_TOP_K = 5


@dataclass
class AnswerCandidate:
    text: str
    span: Span
    snippet_ref: str
    probability: float
    snippet_order: int = 0


@dataclass
class ThresholdConfig:
    t: float
    tuned_on: str = ""

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


@dataclass
class PredictionSet:
    question_ref: str
    qtype: str
    factoid_ranked: list[str] = field(default_factory=list)
    list_answers: list[str] = field(default_factory=list)
    yesno: str | None = None


def beam_search_spans(dist: SpanDistribution, beam: int = DEFAULT_BEAM) -> list[tuple[Span, float]]:
    """Top spans of one snippet by span probability.

    Pruning happens at the start stage only: the `beam` most probable starts
    are kept, then all their end positions are scored exactly. Ties break
    toward the smaller start, then the smaller end.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    starts = sorted(range(dist.n), key=lambda i: (-dist.p_start[i], i))[:beam]
    candidates = []
    for i in starts:
        row = dist.p_span[i]
        for off, p in enumerate(row):
            candidates.append((Span(i, i + off), float(p)))
    candidates.sort(key=lambda c: (-c[1], c[0].start, c[0].end))
    return candidates[:beam]


def aggregate_snippets(
    per_snippet: list[list[AnswerCandidate]], cap: int = DEFAULT_CANDIDATE_CAP
) -> list[AnswerCandidate]:
    """Merge per-snippet candidate lists into one globally sorted list."""
    merged = [c for cands in per_snippet for c in cands]
    merged.sort(
        key=lambda c: (-c.probability, c.snippet_order, c.span.start, c.span.end)
    )
    return merged[:cap]


def dedup(candidates: list[AnswerCandidate]) -> list[AnswerCandidate]:
    """Drop later candidates whose normalized string was already seen."""
    seen = set()
    out = []
    for c in candidates:
        key = normalize_answer(c.text)
        if key in seen:
            continue
        seen.add(key)
        out.append(c)
    return out


def select_factoid(candidates: list[AnswerCandidate]) -> list[str]:
    return [c.text for c in candidates[:FACTOID_TOP_K]]


def select_list(candidates: list[AnswerCandidate], threshold: ThresholdConfig) -> list[str]:
    """All candidates at or above the cutoff; top-1 fallback if none qualify."""
    picked = [c.text for c in candidates if c.probability >= threshold.t]
    if not picked and candidates:
        picked = [candidates[0].text]
    return picked


def tune_threshold(
    dev_predictions: list[tuple[list[AnswerCandidate], list[list[str]]]],
    tuned_on: str = "dev",
) -> ThresholdConfig:
    """Exact search for the cutoff maximizing mean per-question list F1.

    F1 is piecewise constant in t: pieces are bounded by the distinct
    candidate probabilities, plus the region above the global maximum where
    the top-1 fallback applies. Trying t = 0, every distinct probability,
    and t = 1 is therefore exhaustive. Ties go to the smaller t.
    """
    if not dev_predictions:
        raise ValueError("no list questions available for threshold tuning")
    values = {0.0, 1.0}
    for candidates, _ in dev_predictions:
        values.update(float(c.probability) for c in candidates)

    def mean_f1(t: float) -> float:
        total = 0.0
        for candidates, gold in dev_predictions:
            picked = select_list(candidates, ThresholdConfig(t=min(t, 1.0), tuned_on=tuned_on))
            _, _, f1 = score_list(picked, gold)
            total += f1
        return total / len(dev_predictions)

    best_t, best_f1 = None, -1.0
    for t in sorted(values):
        f1 = mean_f1(t)
        if f1 > best_f1 + 1e-12:
            best_t, best_f1 = t, f1
    return ThresholdConfig(t=best_t, tuned_on=tuned_on)


def ensemble_scores(tables: list[ScoreTable]) -> ScoreTable:
    """Element-wise mean of member models' start and end scores.

    Averaging happens on raw scores, before the sigmoid/softmax output layer.
    """
    if not tables:
        raise ValueError("need at least one score table")
    first = tables[0]
    for t in tables[1:]:
        if t.n != first.n or [len(r) for r in t.y_end] != [len(r) for r in first.y_end]:
            raise ValueError("score tables disagree in shape")
    y_start = np.mean([t.y_start for t in tables], axis=0)
    y_end = [
        np.mean([t.y_end[i] for t in tables], axis=0) for i in range(first.n)
    ]
    return ScoreTable(y_start=y_start, y_end=y_end)


def answer_yesno(question: Question) -> str:
    """Constant baseline: the class distribution is skewed toward yes."""
    if question.qtype != "yesno":
        raise ValueError(f"question {question.id!r} is not yes/no")
    return "yes"


# -- question-level pipeline -------------------------------------------------


def question_candidates(
    models: list,
    question: Question,
    beam: int = DEFAULT_BEAM,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> list[AnswerCandidate]:
    """Score every snippet window, beam-search each independently, aggregate
    globally, and deduplicate. `models` holds one or more QAModel; with more
    than one their score tables are averaged (score-level ensembling)."""
    cfg = models[0].cfg
    qtokens = [t.surface for t in tokenize(question.body).tokens]
    per_snippet: list[list[AnswerCandidate]] = []
    order = 0
    for snippet in question.snippets:
        try:
            ctx = tokenize(snippet.text, snippet_ref=snippet.source_id)
        except EmptyContextError:
            continue
        for window in split_windows(ctx, cfg.max_context_tokens):
            tables = [m.score(qtokens, window, question.qtype) for m in models]
            table = ensemble_scores(tables) if len(tables) > 1 else tables[0]
            dist = output_layer(table)
            cands = [
                AnswerCandidate(
                    text=window.span_text(span),
                    span=span,
                    snippet_ref=window.snippet_ref,
                    probability=p,
                    snippet_order=order,
                )
                for span, p in beam_search_spans(dist, beam)
            ]
            per_snippet.append(cands)
            order += 1
    return dedup(aggregate_snippets(per_snippet, cap))


def predict_question(
    models: list,
    question: Question,
    threshold: ThresholdConfig | None = None,
    beam: int = DEFAULT_BEAM,
    cap: int = DEFAULT_CANDIDATE_CAP,
) -> PredictionSet | None:
    """Route a question through the appropriate answering path.

    Returns None for summary questions (outside the system's scope).
    """
    if question.qtype == "summary":
        return None
    if question.qtype == "yesno":
        return PredictionSet(question.id, "yesno", yesno=answer_yesno(question))
    candidates = question_candidates(models, question, beam=beam, cap=cap)
    if question.qtype == "factoid":
        return PredictionSet(question.id, "factoid", factoid_ranked=select_factoid(candidates))
    if threshold is None:
        raise ValueError("list questions require a tuned threshold")
    return PredictionSet(
        question.id, "list", list_answers=select_list(candidates, threshold)
    )
