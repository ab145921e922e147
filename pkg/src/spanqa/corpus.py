"""Dataset ingestion, tokenization, and distant-supervision span labeling.

Two input schemas are supported: a BioASQ-style question file (many snippets
per question, answers with synonyms) and a SQuAD-style file (each paragraph
becomes the single snippet of its questions). Training labels are produced by
matching gold answer strings (and their synonyms) against snippet tokens.

All span indices are stored 0-based and inclusive; the (start, end) pair
addresses tokens, not characters.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

QTYPES = ("factoid", "list", "yesno", "summary")

DEFAULT_MAX_CONTEXT_TOKENS = 400
DEFAULT_WINDOW_OVERLAP = 100


class DatasetError(Exception):
    """Raised when an input file violates its declared schema."""


class EmptyContextError(ValueError):
    """Raised when a text to tokenize contains no tokens."""


@dataclass(frozen=True)
class Token:
    surface: str
    char_start: int
    char_end: int


@dataclass(frozen=True)
class Snippet:
    text: str
    source_id: str


@dataclass
class Question:
    id: str
    qtype: str
    body: str
    snippets: list[Snippet]
    # Each inner list is one gold answer together with its synonyms.
    gold_answers: list[list[str]] = field(default_factory=list)
    batch: str | None = None  # optional evaluation-batch tag

    def __post_init__(self):
        if self.qtype not in QTYPES:
            raise DatasetError(f"question {self.id!r}: unknown type {self.qtype!r}")


@dataclass(frozen=True)
class Span:
    """Inclusive token span; 0-based internally."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise ValueError(f"invalid span ({self.start}, {self.end})")


@dataclass
class TokenizedContext:
    snippet_ref: str
    text: str
    tokens: list[Token]

    @property
    def n(self) -> int:
        return len(self.tokens)

    def span_text(self, span: Span) -> str:
        """Recover the answer string via the original character offsets."""
        return self.text[self.tokens[span.start].char_start : self.tokens[span.end].char_end]


@dataclass
class LabeledExample:
    question_ref: str
    qtype: str  # factoid or list only
    question_body: str
    context: TokenizedContext
    gold_spans: list[Span]


# Tokens are maximal alphanumeric runs; every other non-space character is its
# own token. This keeps offsets exact so answers can be recovered verbatim.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str, snippet_ref: str = "") -> TokenizedContext:
    tokens = [
        Token(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)
    ]
    if not tokens:
        raise EmptyContextError("text contains no tokens")
    return TokenizedContext(snippet_ref=snippet_ref, text=text, tokens=tokens)


def split_windows(
    context: TokenizedContext,
    max_tokens: int = DEFAULT_MAX_CONTEXT_TOKENS,
    overlap: int = DEFAULT_WINDOW_OVERLAP,
) -> list[TokenizedContext]:
    """Split an over-long context into overlapping windows.

    Each window is treated downstream as an independent snippet; token
    character offsets keep pointing into the original text.
    """
    if context.n <= max_tokens:
        return [context]
    if not 0 <= overlap < max_tokens:
        raise ValueError("overlap must satisfy 0 <= overlap < max_tokens")
    stride = max_tokens - overlap
    windows = []
    start = 0
    idx = 0
    while start < context.n:
        chunk = context.tokens[start : start + max_tokens]
        windows.append(
            TokenizedContext(
                snippet_ref=f"{context.snippet_ref}#w{idx}",
                text=context.text,
                tokens=chunk,
            )
        )
        if start + max_tokens >= context.n:
            break
        start += stride
        idx += 1
    return windows


def _answer_token_seq(answer: str) -> list[str]:
    try:
        ctx = tokenize(answer)
    except EmptyContextError:
        return []
    return [t.surface.lower() for t in ctx.tokens]


def label_spans(question: Question, context: TokenizedContext) -> LabeledExample:
    """Mark every token-aligned, case-insensitive occurrence of any gold
    answer (or synonym) as a gold span. Zero occurrences is a valid outcome;
    the caller drops such examples from training.
    """
    if not question.gold_answers:
        raise ValueError(f"question {question.id!r} has no gold answers")
    surfaces = [t.surface.lower() for t in context.tokens]
    spans: set[Span] = set()
    for synonyms in question.gold_answers:
        for answer in synonyms:
            seq = _answer_token_seq(answer)
            if not seq or len(seq) > len(surfaces):
                continue
            for i in range(len(surfaces) - len(seq) + 1):
                if surfaces[i : i + len(seq)] == seq:
                    spans.add(Span(i, i + len(seq) - 1))
    return LabeledExample(
        question_ref=question.id,
        qtype=question.qtype,
        question_body=question.body,
        context=context,
        gold_spans=sorted(spans, key=lambda s: (s.start, s.end)),
    )


def _require(record: dict, key: str, rec_id: str):
    if key not in record or record[key] is None:
        raise DatasetError(f"record {rec_id!r}: missing field {key!r}")
    return record[key]


def _load_bioasq(data: dict) -> list[Question]:
    questions = []
    for rec in data.get("questions", []):
        qid = rec.get("id")
        if not qid:
            raise DatasetError("record with missing 'id'")
        qtype = _require(rec, "type", qid)
        body = _require(rec, "body", qid)
        snippets = [
            Snippet(text=s["text"], source_id=f"{qid}/s{k}")
            for k, s in enumerate(rec.get("snippets", []))
            if s.get("text", "").strip()
        ]
        gold = _parse_exact_answer(rec.get("exact_answer"), qtype)
        batch = rec.get("batch")
        questions.append(
            Question(qid, qtype, body, snippets, gold, batch=str(batch) if batch is not None else None)
        )
    return questions


def _parse_exact_answer(exact, qtype: str) -> list[list[str]]:
    """BioASQ convention: factoid answers are a flat synonym list (one answer);
    list answers are a list of synonym lists."""
    if exact is None:
        return []
    if isinstance(exact, str):
        return [[exact]]
    if not isinstance(exact, list):
        return []
    if qtype == "factoid":
        if exact and isinstance(exact[0], list):
            return [list(map(str, syn)) for syn in exact]
        return [list(map(str, exact))] if exact else []
    if qtype == "list":
        out = []
        for item in exact:
            if isinstance(item, list):
                out.append(list(map(str, item)))
            else:
                out.append([str(item)])
        return out
    return []


def _load_squad(data: dict) -> list[Question]:
    questions = []
    for article in data.get("data", []):
        for para in article.get("paragraphs", []):
            context = para.get("context", "")
            for qa in para.get("qas", []):
                qid = qa.get("id")
                if not qid:
                    raise DatasetError("qa record with missing 'id'")
                body = _require(qa, "question", qid)
                answers = [a["text"] for a in qa.get("answers", []) if a.get("text")]
                gold = [[a] for a in dict.fromkeys(answers)]
                questions.append(
                    Question(
                        id=qid,
                        qtype="factoid",
                        body=body,
                        snippets=[Snippet(text=context, source_id=f"{qid}/s0")],
                        gold_answers=gold,
                    )
                )
    return questions


def load_dataset(path: str, format: str) -> list[Question]:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}: not valid JSON ({e})") from e
    if format == "bioasq":
        return _load_bioasq(data)
    if format == "squad":
        return _load_squad(data)
    raise ValueError(f"unknown dataset format {format!r}")


def build_examples(
    questions: list[Question],
    max_context_tokens: int = DEFAULT_MAX_CONTEXT_TOKENS,
    overlap: int = DEFAULT_WINDOW_OVERLAP,
) -> tuple[list[LabeledExample], dict]:
    """Label every (question, snippet window) pair of the factoid/list
    questions. Returns the examples plus a summary of what was skipped."""
    examples = []
    stats = {
        "questions": len(questions),
        "skipped_summary": 0,
        "skipped_yesno": 0,
        "skipped_no_gold": 0,
        "examples": 0,
        "empty_label_examples": 0,
    }
    for q in questions:
        if q.qtype == "summary":
            stats["skipped_summary"] += 1
            continue
        if q.qtype == "yesno":
            stats["skipped_yesno"] += 1
            continue
        if not q.gold_answers:
            stats["skipped_no_gold"] += 1
            continue
        for sn in q.snippets:
            try:
                ctx = tokenize(sn.text, snippet_ref=sn.source_id)
            except EmptyContextError:
                continue
            for window in split_windows(ctx, max_context_tokens, overlap):
                ex = label_spans(q, window)
                stats["examples"] += 1
                if not ex.gold_spans:
                    stats["empty_label_examples"] += 1
                examples.append(ex)
    return examples, stats


def example_to_record(ex: LabeledExample) -> dict:
    return {
        "question_id": ex.question_ref,
        "qtype": ex.qtype,
        "question": ex.question_body,
        "snippet_ref": ex.context.snippet_ref,
        "context_text": ex.context.text,
        "tokens": [[t.surface, t.char_start, t.char_end] for t in ex.context.tokens],
        "gold_spans": [[s.start, s.end] for s in ex.gold_spans],
    }


def example_from_record(rec: dict) -> LabeledExample:
    ctx = TokenizedContext(
        snippet_ref=rec["snippet_ref"],
        text=rec["context_text"],
        tokens=[Token(s, cs, ce) for s, cs, ce in rec["tokens"]],
    )
    return LabeledExample(
        question_ref=rec["question_id"],
        qtype=rec["qtype"],
        question_body=rec["question"],
        context=ctx,
        gold_spans=[Span(i, j) for i, j in rec["gold_spans"]],
    )


def write_examples(path: str, examples: list[LabeledExample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(example_to_record(ex), sort_keys=True) + "\n")


def read_examples(path: str) -> list[LabeledExample]:
    examples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                examples.append(example_from_record(json.loads(line)))
    return examples
