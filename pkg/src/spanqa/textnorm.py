"""Answer-string normalization shared by candidate dedup and metric matching.

Keeping one normalizer for both selection and scoring avoids the situation
where two strings are deduplicated as equal but scored as different.
"""

import re

_WS = re.compile(r"\s+")
_EDGE_PUNCT = re.compile(r"^[^\w]+|[^\w]+$")


def normalize_answer(text: str) -> str:
    """Lowercase, collapse internal whitespace, strip surrounding punctuation.

    No article stripping: "the BRCA1" stays distinct from "BRCA1".
    """
    text = text.lower().strip()
    text = _WS.sub(" ", text)
    text = _EDGE_PUNCT.sub("", text)
    return text
