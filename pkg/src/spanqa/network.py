"""Span-scoring network and its output layer.

The scorer follows the FastQA family in its published signature traits:
a word-in-question indicator on context tokens, a shared bidirectional
recurrent encoder, attention pooling of the question into a fixed vector,
and lightweight feedforward scorers for the start and the start-conditioned
end of the answer span.

Output layer:
    p_start[i]   = sigmoid(y_start[i])
    p_end[i][.]  = softmax(y_end[i][.])        (row per chosen start)
    p_span[i][j] = p_start[i] * p_end[i][j]

The sigmoid start (instead of a softmax over starts) lets several starts be
probable at once, which is what makes list answers possible.

All numerics are 64-bit floats.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .corpus import Span, TokenizedContext
from .features import (
    PAD_CHAR_INDEX,
    QTYPE_ONEHOT,
    CharConvConfig,
    UnsupportedQuestionTypeError,
)

torch.set_num_threads(max(1, os.cpu_count() or 1))

CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Raised when a forward or backward pass produces non-finite values."""


class EmptyContextError(ValueError):
    pass


@dataclass
class NetworkConfig:
    general_dim: int = 300
    domain_dim: int = 200
    char_dim: int = 16
    filter_width: int = 5
    num_filters: int = 50
    hidden_size: int = 64
    ff_hidden: int = 64
    max_span: int = 16
    max_context_tokens: int = 400

    @property
    def token_feature_dim(self) -> int:
        return self.general_dim + self.num_filters + self.domain_dim + 2


@dataclass
class Vocabs:
    general: dict[str, int]
    domain: dict[str, int]
    char: dict[str, int]
    general_trainable: bool = False
    domain_trainable: bool = False


@dataclass
class ScoreTable:
    """Start scores plus start-conditioned end scores for one snippet.

    Row i of y_end covers end positions j in [i, i + len(row) - 1]; rows are
    truncated to the configured maximum span length.
    """

    y_start: np.ndarray
    y_end: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.y_start)

    def validate(self) -> None:
        if self.n == 0:
            raise EmptyContextError("empty score table")
        if len(self.y_end) != self.n:
            raise ValueError("y_end must have one row per start position")
        if not np.all(np.isfinite(self.y_start)):
            raise NumericError("non-finite start scores")
        for i, row in enumerate(self.y_end):
            if len(row) < 1 or i + len(row) > self.n:
                raise ValueError(f"y_end row {i} has invalid support")
            if not np.all(np.isfinite(row)):
                raise NumericError(f"non-finite end scores in row {i}")


@dataclass
class SpanDistribution:
    p_start: np.ndarray
    p_end: list[np.ndarray]
    p_span: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.p_start)


def output_layer(scores: ScoreTable) -> SpanDistribution:
    scores.validate()
    p_start = 1.0 / (1.0 + np.exp(-scores.y_start))
    p_end = []
    p_span = []
    for i, row in enumerate(scores.y_end):
        shifted = row - row.max()  # max-subtraction for stability
        e = np.exp(shifted)
        p_row = e / e.sum()
        p_end.append(p_row)
        p_span.append(p_start[i] * p_row)
    return SpanDistribution(p_start=p_start, p_end=p_end, p_span=p_span)


def loss(scores: ScoreTable, gold_spans: list[Span]) -> float:
    """Cross-entropy loss with the lowest-loss rule over gold occurrences.

    Per gold span (i, j): binary cross-entropy pushing p_start[i] toward 1
    plus categorical cross-entropy of p_end[i][.] toward j; the total keeps
    only the minimum over gold spans. Starts of no gold span additionally get
    binary cross-entropy toward 0.
    """
    if not gold_spans:
        raise ValueError("gold_spans must be non-empty")
    scores.validate()
    y = scores.y_start
    gold_starts = {s.start for s in gold_spans}
    per_span = []
    for s in gold_spans:
        row = scores.y_end[s.start]
        offset = s.end - s.start
        if not (0 <= offset < len(row)):
            raise ValueError(f"gold span {s} outside end-score support")
        bce = np.logaddexp(0.0, -y[s.start])  # -log sigmoid(y)
        ce = np.logaddexp.reduce(row - row.max()) + row.max() - row[offset]
        per_span.append(bce + ce)
    negatives = [k for k in range(scores.n) if k not in gold_starts]
    neg = float(np.logaddexp(0.0, y[negatives]).sum()) if negatives else 0.0
    return float(min(per_span) + neg)


def _xavier_uniform_(tensor: torch.Tensor, gen: torch.Generator) -> None:
    fan_out, fan_in = tensor.shape[0], int(np.prod(tensor.shape[1:]))
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=gen)


class SpanScorer(nn.Module):
    """The trainable network. One (question, context) pair per forward pass."""

    def __init__(
        self,
        cfg: NetworkConfig,
        vocabs: Vocabs,
        seed: int = 0,
        general_rows: np.ndarray | None = None,
        domain_rows: np.ndarray | None = None,
    ):
        super().__init__()
        self.cfg = cfg
        self.vocabs = vocabs
        self.char_cfg = CharConvConfig(
            char_vocab=vocabs.char,
            char_dim=cfg.char_dim,
            filter_width=cfg.filter_width,
            num_filters=cfg.num_filters,
        )
        dt = torch.float64

        def emb_tensor(rows, vocab, dim):
            if rows is not None:
                t = torch.tensor(np.asarray(rows, dtype=np.float64))
                if t.shape != (len(vocab) + 1, dim):
                    raise ValueError("embedding rows do not match vocab/dim")
                return t
            return torch.zeros(len(vocab) + 1, dim, dtype=dt)

        gen_t = emb_tensor(general_rows, vocabs.general, cfg.general_dim)
        dom_t = emb_tensor(domain_rows, vocabs.domain, cfg.domain_dim)
        if vocabs.general_trainable:
            self.general_rows = nn.Parameter(gen_t)
        else:
            self.register_buffer("general_rows", gen_t)
            self.general_oov = nn.Parameter(torch.zeros(cfg.general_dim, dtype=dt))
        if vocabs.domain_trainable:
            self.domain_rows = nn.Parameter(dom_t)
        else:
            self.register_buffer("domain_rows", dom_t)
            self.domain_oov = nn.Parameter(torch.zeros(cfg.domain_dim, dtype=dt))

        self.char_emb = nn.Parameter(torch.zeros(self.char_cfg.vocab_size, cfg.char_dim, dtype=dt))
        self.conv_w = nn.Parameter(
            torch.zeros(cfg.num_filters, cfg.filter_width, cfg.char_dim, dtype=dt)
        )
        self.conv_b = nn.Parameter(torch.zeros(cfg.num_filters, dtype=dt))

        h = cfg.hidden_size
        self.encoder = nn.LSTM(
            cfg.token_feature_dim + 1, h, bidirectional=True, batch_first=True
        ).to(dt)
        self.attn_proj = nn.Linear(2 * h, cfg.ff_hidden, dtype=dt)
        self.attn_v = nn.Parameter(torch.zeros(cfg.ff_hidden, dtype=dt))
        self.start_hidden = nn.Linear(4 * h, cfg.ff_hidden, dtype=dt)
        self.start_out = nn.Linear(cfg.ff_hidden, 1, dtype=dt)
        self.end_hidden = nn.Linear(6 * h, cfg.ff_hidden, dtype=dt)
        self.end_out = nn.Linear(cfg.ff_hidden, 1, dtype=dt)

        self.seed = seed
        self._init_weights(seed, reinit_embeddings=general_rows is None, which="general")
        self._init_weights(seed, reinit_embeddings=domain_rows is None, which="domain")
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.char_emb.uniform_(
                -float(np.sqrt(3.0 / cfg.char_dim)), float(np.sqrt(3.0 / cfg.char_dim)), generator=gen
            )
            self.char_emb[PAD_CHAR_INDEX].zero_()
        _xavier_uniform_(self.conv_w, gen)
        for name, p in sorted(self.named_parameters()):
            if name in ("char_emb", "conv_w") or name.endswith("_rows"):
                continue
            if p.dim() >= 2:
                _xavier_uniform_(p, gen)
            elif name == "attn_v":
                bound = float(np.sqrt(6.0 / (cfg.ff_hidden + 1)))
                with torch.no_grad():
                    p.uniform_(-bound, bound, generator=gen)
            else:
                with torch.no_grad():
                    p.zero_()

    def _init_weights(self, seed: int, reinit_embeddings: bool, which: str) -> None:
        if not reinit_embeddings:
            return
        rows = getattr(self, f"{which}_rows")
        dim = rows.shape[1]
        gen = torch.Generator().manual_seed(seed * 2 + (0 if which == "general" else 1))
        scale = float(np.sqrt(3.0 / dim))
        with torch.no_grad():
            rows.uniform_(-scale, scale, generator=gen)
            rows[-1].zero_()  # OOV row

    # -- feature building -------------------------------------------------

    def _lookup(self, vocab: dict[str, int], oov_index: int, token: str) -> int:
        idx = vocab.get(token.lower())
        if idx is None:
            idx = vocab.get(token)
        return oov_index if idx is None else idx

    def _embed_rows(self, rows, oov_param, vocab, tokens):
        ids = [self._lookup(vocab, rows.shape[0] - 1, t) for t in tokens]
        ids_t = torch.tensor(ids)
        out = rows[ids_t]
        if oov_param is not None:
            mask = (ids_t == rows.shape[0] - 1).unsqueeze(1)
            out = torch.where(mask, oov_param.unsqueeze(0).expand_as(out), out)
        return out

    def _char_features(self, tokens: list[str]) -> torch.Tensor:
        w = self.cfg.filter_width
        max_len = max(w, max(len(t) for t in tokens))
        ids = torch.full((len(tokens), max_len), PAD_CHAR_INDEX, dtype=torch.long)
        for r, tok in enumerate(tokens):
            for c, ch in enumerate(tok):
                ids[r, c] = self.char_cfg.char_index(ch)
        emb = self.char_emb[ids]  # (T, L, C)
        windows = emb.unfold(1, w, 1)  # (T, P, C, w)
        conv = torch.einsum("tpcw,fwc->tpf", windows, self.conv_w) + self.conv_b
        # pool only over windows inside the (pad-extended) token
        positions = torch.arange(conv.shape[1]).unsqueeze(0)
        valid = positions < torch.tensor(
            [max(len(t), w) - w + 1 for t in tokens]
        ).unsqueeze(1)
        conv = conv.masked_fill(~valid.unsqueeze(2), float("-inf"))
        return conv.max(dim=1).values  # (T, F)

    def token_features(self, tokens: list[str], qtype: str) -> torch.Tensor:
        """(len(tokens), token_feature_dim) matrix: [general;char;domain;qtype]."""
        if qtype not in QTYPE_ONEHOT:
            raise UnsupportedQuestionTypeError(f"unsupported question type {qtype!r}")
        gen = self._embed_rows(
            self.general_rows, getattr(self, "general_oov", None), self.vocabs.general, tokens
        )
        dom = self._embed_rows(
            self.domain_rows, getattr(self, "domain_oov", None), self.vocabs.domain, tokens
        )
        cc = self._char_features(tokens)
        onehot = torch.tensor(QTYPE_ONEHOT[qtype], dtype=torch.float64)
        onehot = onehot.unsqueeze(0).expand(len(tokens), 2)
        return torch.cat([gen, cc, dom, onehot], dim=1)

    # -- scoring -----------------------------------------------------------

    def forward(
        self, question_tokens: list[str], context_tokens: list[str], qtype: str
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        n = len(context_tokens)
        if n == 0:
            raise EmptyContextError("context has no tokens")
        if n > self.cfg.max_context_tokens:
            raise ValueError(f"context length {n} exceeds max_context_tokens")
        qf = self.token_features(question_tokens, qtype)
        cf = self.token_features(context_tokens, qtype)
        qset = {t.lower() for t in question_tokens}
        wiq = torch.tensor(
            [[1.0 if t.lower() in qset else 0.0] for t in context_tokens], dtype=torch.float64
        )
        qf = torch.cat([qf, torch.zeros(len(question_tokens), 1, dtype=torch.float64)], dim=1)
        cf = torch.cat([cf, wiq], dim=1)

        hq, _ = self.encoder(qf.unsqueeze(0))
        hc, _ = self.encoder(cf.unsqueeze(0))
        hq, hc = hq.squeeze(0), hc.squeeze(0)  # (m, 2h), (n, 2h)

        # attention pooling of the question into a fixed vector
        u = torch.tanh(self.attn_proj(hq)) @ self.attn_v
        alpha = torch.softmax(u, dim=0)
        q = alpha @ hq  # (2h,)

        q_rep = q.unsqueeze(0).expand(n, -1)
        y_start = self.start_out(torch.tanh(self.start_hidden(torch.cat([hc, q_rep], 1)))).squeeze(1)

        starts, ends = [], []
        for i in range(n):
            hi = min(i + self.cfg.max_span - 1, n - 1)
            for j in range(i, hi + 1):
                starts.append(i)
                ends.append(j)
        pair_feat = torch.cat(
            [hc[ends], hc[starts], q.unsqueeze(0).expand(len(starts), -1)], dim=1
        )
        pair_scores = self.end_out(torch.tanh(self.end_hidden(pair_feat))).squeeze(1)

        y_end_rows: list[torch.Tensor] = []
        pos = 0
        for i in range(n):
            width = min(i + self.cfg.max_span - 1, n - 1) - i + 1
            y_end_rows.append(pair_scores[pos : pos + width])
            pos += width
        return y_start, y_end_rows

    def score_table(
        self, question_tokens: list[str], context_tokens: list[str], qtype: str
    ) -> ScoreTable:
        with torch.no_grad():
            y_start, rows = self.forward(question_tokens, context_tokens, qtype)
        table = ScoreTable(
            y_start=y_start.numpy().copy(), y_end=[r.numpy().copy() for r in rows]
        )
        table.validate()
        return table


def loss_torch(
    y_start: torch.Tensor, y_end_rows: list[torch.Tensor], gold_spans: list[Span]
) -> torch.Tensor:
    """Differentiable twin of loss(); kept formula-identical (see tests)."""
    if not gold_spans:
        raise ValueError("gold_spans must be non-empty")
    gold_starts = {s.start for s in gold_spans}
    per_span = []
    for s in gold_spans:
        row = y_end_rows[s.start]
        offset = s.end - s.start
        if not (0 <= offset < len(row)):
            raise ValueError(f"gold span {s} outside end-score support")
        bce = nn.functional.softplus(-y_start[s.start])
        ce = torch.logsumexp(row, dim=0) - row[offset]
        per_span.append(bce + ce)
    total = torch.stack(per_span).min()
    negatives = [k for k in range(len(y_start)) if k not in gold_starts]
    if negatives:
        total = total + nn.functional.softplus(y_start[negatives]).sum()
    return total


def gradients(
    model: SpanScorer,
    question_tokens: list[str],
    context_tokens: list[str],
    qtype: str,
    gold_spans: list[Span],
) -> dict[str, np.ndarray]:
    """Exact gradients of the loss for every trainable array."""
    model.zero_grad(set_to_none=True)
    y_start, rows = model(question_tokens, context_tokens, qtype)
    value = loss_torch(y_start, rows, gold_spans)
    value.backward()
    out = {}
    for name, p in model.named_parameters():
        g = p.grad
        arr = np.zeros(p.shape) if g is None else g.detach().numpy().copy()
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in {name}")
        out[name] = arr
    return out


# -- checkpoints -----------------------------------------------------------


def config_fingerprint(cfg: NetworkConfig, vocabs: Vocabs) -> str:
    payload = {
        "config": asdict(cfg),
        "vocab_sizes": {
            "general": len(vocabs.general),
            "domain": len(vocabs.domain),
            "char": len(vocabs.char),
        },
        "general_trainable": vocabs.general_trainable,
        "domain_trainable": vocabs.domain_trainable,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class QAModel:
    """A scorer plus everything needed to rebuild it from disk."""

    cfg: NetworkConfig
    vocabs: Vocabs
    scorer: SpanScorer
    seed: int = 0
    phase: str = "init"
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        cfg: NetworkConfig,
        vocabs: Vocabs,
        seed: int = 0,
        general_rows: np.ndarray | None = None,
        domain_rows: np.ndarray | None = None,
    ) -> "QAModel":
        scorer = SpanScorer(cfg, vocabs, seed, general_rows, domain_rows)
        return cls(cfg=cfg, vocabs=vocabs, scorer=scorer, seed=seed)

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.cfg, self.vocabs)

    def score(self, question_tokens: list[str], context: TokenizedContext, qtype: str) -> ScoreTable:
        return self.scorer.score_table(question_tokens, [t.surface for t in context.tokens], qtype)

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.scorer.state_dict().items()}

    def save(self, path: str) -> None:
        """Atomic checkpoint write: temp directory, then rename into place."""
        tmp = path + ".tmp"
        if os.path.exists(tmp):
            shutil.rmtree(tmp)
        os.makedirs(os.path.join(tmp, "params"))
        manifest = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "config_fingerprint": self.fingerprint,
            "seed": self.seed,
            "phase": self.phase,
            **self.extra,
        }
        with open(os.path.join(tmp, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        with open(os.path.join(tmp, "vocab.json"), "w") as f:
            json.dump(
                {
                    "general": self.vocabs.general,
                    "domain": self.vocabs.domain,
                    "char": self.vocabs.char,
                    "general_trainable": self.vocabs.general_trainable,
                    "domain_trainable": self.vocabs.domain_trainable,
                },
                f,
                sort_keys=True,
            )
        for name, arr in self.parameter_arrays().items():
            np.save(os.path.join(tmp, "params", name + ".npy"), arr)
        if os.path.exists(path):
            shutil.rmtree(path)
        os.rename(tmp, path)

    @classmethod
    def load(cls, path: str) -> "QAModel":
        with open(os.path.join(path, "manifest.json")) as f:
            manifest = json.load(f)
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        with open(os.path.join(path, "vocab.json")) as f:
            v = json.load(f)
        cfg = NetworkConfig(**manifest["config"])
        vocabs = Vocabs(
            general=v["general"],
            domain=v["domain"],
            char=v["char"],
            general_trainable=v["general_trainable"],
            domain_trainable=v["domain_trainable"],
        )
        scorer = SpanScorer(cfg, vocabs, seed=manifest.get("seed", 0))
        state = {}
        for name in scorer.state_dict():
            arr = np.load(os.path.join(path, "params", name + ".npy"))
            state[name] = torch.tensor(arr, dtype=torch.float64)
        scorer.load_state_dict(state)
        extra = {
            k: v
            for k, v in manifest.items()
            if k not in ("version", "config", "config_fingerprint", "seed", "phase")
        }
        return cls(
            cfg=cfg,
            vocabs=vocabs,
            scorer=scorer,
            seed=manifest.get("seed", 0),
            phase=manifest.get("phase", "init"),
            extra=extra,
        )
