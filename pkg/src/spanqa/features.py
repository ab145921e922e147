"""Vocabularies, pretrained word-vector files, and per-token input vectors.

Each token is represented by the concatenation
    [general embedding ; char-convolution embedding ; domain embedding ;
     question-type one-hot]
where the one-hot (factoid / list) is identical for all tokens of a question.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAD_CHAR_INDEX = 0
UNK_CHAR_INDEX = 1

QTYPE_ONEHOT = {"factoid": (1.0, 0.0), "list": (0.0, 1.0)}


class WordVectorFormatError(Exception):
    """Raised when a word-vector file line does not match the expected format."""


class UnsupportedQuestionTypeError(ValueError):
    pass


@dataclass
class EmbeddingMatrix:
    dim: int
    vocab: dict[str, int]  # token -> row index
    rows: np.ndarray  # (len(vocab) + 1, dim); last row is OOV
    trainable: bool = False

    @property
    def oov_index(self) -> int:
        return self.rows.shape[0] - 1

    def lookup(self, token: str) -> int:
        """Lowercased lookup with a fallback to the original-case entry."""
        idx = self.vocab.get(token.lower())
        if idx is None:
            idx = self.vocab.get(token)
        return self.oov_index if idx is None else idx


@dataclass
class CharConvConfig:
    char_vocab: dict[str, int] = field(default_factory=dict)
    char_dim: int = 16
    filter_width: int = 5
    num_filters: int = 50

    def __post_init__(self):
        if self.filter_width < 1 or self.num_filters < 1:
            raise ValueError("filter_width and num_filters must be >= 1")

    def char_index(self, ch: str) -> int:
        return self.char_vocab.get(ch, UNK_CHAR_INDEX)

    @property
    def vocab_size(self) -> int:
        # pad + unk + known characters
        return 2 + len(self.char_vocab)


def build_char_vocab(tokens) -> dict[str, int]:
    """Deterministic char -> index map; indices 0/1 reserved for pad/unk."""
    chars = sorted({ch for tok in tokens for ch in tok})
    return {ch: i + 2 for i, ch in enumerate(chars)}


def build_word_vocab(tokens) -> dict[str, int]:
    """Deterministic lowercased token -> row map (OOV row handled separately)."""
    vocab = sorted({tok.lower() for tok in tokens})
    return {tok: i for i, tok in enumerate(vocab)}


def random_embeddings(vocab: dict[str, int], dim: int, seed: int) -> EmbeddingMatrix:
    """Fallback when no pretrained file is given: trainable random rows."""
    rng = np.random.default_rng(seed)
    scale = np.sqrt(3.0 / dim)
    rows = rng.uniform(-scale, scale, size=(len(vocab) + 1, dim))
    rows[-1] = 0.0  # OOV row starts at zero
    return EmbeddingMatrix(dim=dim, vocab=dict(vocab), rows=rows, trainable=True)


def load_word_vectors(path: str, expected_dim: int) -> EmbeddingMatrix:
    """Read a text word-vector file (token followed by decimals, one per line).

    The returned matrix has one extra zero row for out-of-vocabulary tokens
    and is frozen (non-trainable) by default.
    """
    vocab: dict[str, int] = {}
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != expected_dim:
                raise WordVectorFormatError(
                    f"{path}:{lineno}: expected {expected_dim} values, got {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as e:
                raise WordVectorFormatError(f"{path}:{lineno}: {e}") from e
            if token in vocab:
                continue  # first occurrence wins
            vocab[token] = len(rows)
            rows.append(vec)
    matrix = np.vstack(rows + [np.zeros(expected_dim)]) if rows else np.zeros((1, expected_dim))
    return EmbeddingMatrix(dim=expected_dim, vocab=vocab, rows=matrix, trainable=False)


def dump_word_vectors(path: str, emb: EmbeddingMatrix, fmt: str = "%.6g") -> None:
    order = sorted(emb.vocab.items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8") as f:
        for token, idx in order:
            f.write(token + " " + " ".join(fmt % v for v in emb.rows[idx]) + "\n")


def char_convolution(
    token: str, cfg: CharConvConfig, char_emb: np.ndarray, conv_w: np.ndarray, conv_b: np.ndarray
) -> np.ndarray:
    """1-d convolution over character embeddings, max-pooled per filter.

    char_emb: (char_vocab_size, char_dim); conv_w: (num_filters, filter_width,
    char_dim); conv_b: (num_filters,). Tokens shorter than the filter width
    are padded with the reserved pad character.
    """
    if not token:
        raise ValueError("token must be non-empty")
    ids = [cfg.char_index(ch) for ch in token]
    while len(ids) < cfg.filter_width:
        ids.append(PAD_CHAR_INDEX)
    mat = char_emb[ids]  # (L, char_dim)
    L = mat.shape[0]
    w = cfg.filter_width
    windows = np.stack([mat[k : L - w + 1 + k] for k in range(w)], axis=1)  # (L-w+1, w, char_dim)
    conv = np.einsum("pwc,fwc->pf", windows, conv_w) + conv_b  # (positions, num_filters)
    return conv.max(axis=0)


def assemble_token_features(
    tokens: list[str],
    qtype: str,
    general: EmbeddingMatrix,
    domain: EmbeddingMatrix,
    cfg: CharConvConfig,
    char_emb: np.ndarray,
    conv_w: np.ndarray,
    conv_b: np.ndarray,
) -> np.ndarray:
    """Feature matrix (len(tokens), d_general + num_filters + d_domain + 2)."""
    if qtype not in QTYPE_ONEHOT:
        raise UnsupportedQuestionTypeError(f"unsupported question type {qtype!r}")
    onehot = np.array(QTYPE_ONEHOT[qtype])
    feats = []
    for tok in tokens:
        gen = general.rows[general.lookup(tok)]
        dom = domain.rows[domain.lookup(tok)]
        cc = char_convolution(tok, cfg, char_emb, conv_w, conv_b)
        feats.append(np.concatenate([gen, cc, dom, onehot]))
    return np.vstack(feats)
