"""Deterministic synthetic mini-corpora with planted answers.

Real challenge data and pretrained embeddings cannot be vendored, so the
bundled pipeline demos and smoke tests run on generated questions whose
answers are planted verbatim in their snippets. Each question carries a cue
token that appears in both the question and the answer-bearing sentence,
which makes the task learnable by the word-in-question feature.
"""

from __future__ import annotations

import json
import random
from importlib import resources

_FILLER = (
    "the study reports that expression of several factors was observed in "
    "patients after treatment and the clinical results suggest a role for "
    "further analysis of cohort samples under varied conditions"
).split()


def _filler(rng: random.Random, k: int) -> str:
    return " ".join(rng.choice(_FILLER) for _ in range(k))


def _factoid(idx: int, rng: random.Random) -> dict:
    cue = f"marker{idx}"
    answer = f"gene{idx}"
    sent = f"{_filler(rng, rng.randint(3, 6))} {cue} regulates {answer} {_filler(rng, rng.randint(3, 6))}."
    decoy = f"{_filler(rng, rng.randint(6, 10))}."
    return {
        "id": f"syn_factoid_{idx}",
        "type": "factoid",
        "body": f"Which gene is regulated by {cue}?",
        "snippets": [{"text": sent}, {"text": decoy}],
        "exact_answer": [answer],
    }


def _list(idx: int, rng: random.Random) -> dict:
    cue = f"target{idx}"
    answers = [f"druga{idx}", f"drugb{idx}"]
    sent = (
        f"{_filler(rng, rng.randint(2, 5))} {cue} is inhibited by {answers[0]} and "
        f"{answers[1]} {_filler(rng, rng.randint(2, 5))}."
    )
    return {
        "id": f"syn_list_{idx}",
        "type": "list",
        "body": f"Which drugs inhibit {cue}?",
        "snippets": [{"text": sent}],
        "exact_answer": [[a] for a in answers],
    }


def _yesno(idx: int, rng: random.Random) -> dict:
    return {
        "id": f"syn_yesno_{idx}",
        "type": "yesno",
        "body": f"Is factor{idx} associated with disease?",
        "snippets": [{"text": f"factor{idx} {_filler(rng, 8)}."}],
        "exact_answer": "yes",
    }


def _summary(idx: int, rng: random.Random) -> dict:
    return {
        "id": f"syn_summary_{idx}",
        "type": "summary",
        "body": f"What is known about pathway{idx}?",
        "snippets": [{"text": f"pathway{idx} {_filler(rng, 10)}."}],
    }


def generate_bioasq(n_questions: int = 30, seed: int = 13) -> dict:
    """BioASQ-style corpus: roughly 60% factoid, 25% list, plus a few yes/no
    and one summary question to exercise the skip paths."""
    rng = random.Random(seed)
    questions = []
    for i in range(n_questions):
        r = i % 20
        if r < 12:
            questions.append(_factoid(i, rng))
        elif r < 17:
            questions.append(_list(i, rng))
        elif r < 19:
            questions.append(_yesno(i, rng))
        else:
            questions.append(_summary(i, rng))
    return {"questions": questions}


def generate_squad(n_questions: int = 30, seed: int = 29) -> dict:
    """SQuAD-style corpus (factoid only, one paragraph per question)."""
    rng = random.Random(seed)
    paragraphs = []
    for i in range(n_questions):
        cue = f"topic{i}"
        answer = f"entity{i}"
        context = (
            f"{_filler(rng, rng.randint(4, 8))} {cue} is linked to {answer} "
            f"{_filler(rng, rng.randint(4, 8))}."
        )
        start = context.index(answer)
        paragraphs.append(
            {
                "context": context,
                "qas": [
                    {
                        "id": f"syn_squad_{i}",
                        "question": f"What is linked to {cue}?",
                        "answers": [{"text": answer, "answer_start": start}],
                    }
                ],
            }
        )
    return {"data": [{"title": "synthetic", "paragraphs": paragraphs}]}


def bundled_path(name: str) -> str:
    """Path of a bundled data file: synthetic_bioasq.json, synthetic_squad.json,
    or desk_config.json."""
    return str(resources.files("spanqa").joinpath("data", name))


def write_json(path: str, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
