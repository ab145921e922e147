import numpy as np

from spanqa import corpus, features, network, synthetic, training

WORDS = [
    "the", "gene", "brca1", "regulates", "p53", "in", "cells", "what",
    "which", "protein", "binds", "to", "factor", "drug", "inhibits", "kinase",
]

TINY = dict(
    general_dim=4,
    domain_dim=3,
    char_dim=3,
    filter_width=2,
    num_filters=3,
    hidden_size=5,
    ff_hidden=6,
    max_span=4,
    max_context_tokens=50,
)


def make_model(seed=0, words=WORDS, **overrides) -> network.QAModel:
    base = dict(TINY)
    base.update(overrides)
    cfg = network.NetworkConfig(**base)
    vocabs = network.Vocabs(
        general=features.build_word_vocab(words),
        domain=features.build_word_vocab(words[: len(words) // 2]),
        char=features.build_char_vocab(words),
        general_trainable=True,
        domain_trainable=True,
    )
    return network.QAModel.build(cfg, vocabs, seed=seed)


def random_score_table(rng: np.random.Generator, n: int, max_span: int | None = None) -> network.ScoreTable:
    if max_span is None:
        max_span = n
    y_start = rng.normal(scale=2.0, size=n)
    y_end = [rng.normal(scale=2.0, size=min(max_span, n - i)) for i in range(n)]
    return network.ScoreTable(y_start=y_start, y_end=y_end)


def planted_training_setup(n_questions: int, seed: int = 7):
    """A small corpus with planted answers plus a model sized to overfit it."""
    data = synthetic.generate_bioasq(60, seed=13)
    questions = [q for q in corpus._load_bioasq(data) if q.qtype == "factoid"][:n_questions]
    examples, _ = corpus.build_examples(questions)
    examples = [e for e in examples if e.gold_spans]
    cfg = network.NetworkConfig(
        general_dim=16,
        domain_dim=8,
        char_dim=8,
        filter_width=3,
        num_filters=8,
        hidden_size=16,
        ff_hidden=16,
        max_span=4,
        max_context_tokens=60,
    )
    tokens = list(training.corpus_tokens(examples))
    gv = features.build_word_vocab(tokens)
    dv = features.build_word_vocab(tokens)
    vocabs = network.Vocabs(gv, dv, features.build_char_vocab(tokens), True, True)
    gen = features.random_embeddings(gv, cfg.general_dim, seed)
    dom = features.random_embeddings(dv, cfg.domain_dim, seed + 1)
    model = network.QAModel.build(
        cfg, vocabs, seed=seed, general_rows=gen.rows, domain_rows=dom.rows
    )
    items = training.trainable_items(examples, cfg)
    return model, items, questions
