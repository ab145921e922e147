"""Command-line surface for the pipeline.

Commands: prepare, train, tune-threshold, predict, evaluate. They compose:

    spanqa prepare --input squad.json --format squad --output pre.jsonl
    spanqa train --phase pretrain --data pre.jsonl --out ckpt/pre
    spanqa train --phase finetune --init ckpt/pre --data bio.jsonl --out ckpt/ft
    spanqa tune-threshold --model ckpt/ft --data bio.json --out threshold.json
    spanqa predict --model ckpt/ft --input bio.json \
        --threshold-file threshold.json --output pred.json
    spanqa evaluate --predictions pred.json --gold bio.json

The QA_SEED environment variable overrides --seed everywhere.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import corpus, decoding, evaluation, features, network, training

NETWORK_KEYS = {f.name for f in dataclasses.fields(network.NetworkConfig)}
OPTIMIZER_KEYS = {f.name for f in dataclasses.fields(training.OptimizerConfig)}


class CliError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _seed(args) -> int:
    env = os.environ.get("QA_SEED")
    return int(env) if env else args.seed


def _network_config(cfg: dict) -> network.NetworkConfig:
    return network.NetworkConfig(**{k: v for k, v in cfg.items() if k in NETWORK_KEYS})


def _optimizer_config(cfg: dict, phase: str) -> training.OptimizerConfig:
    base = dataclasses.asdict(training.default_config(phase))
    base.update({k: v for k, v in cfg.items() if k in OPTIMIZER_KEYS})
    return training.OptimizerConfig(**base)


def _decode_opts(cfg: dict) -> tuple[int, int]:
    return cfg.get("beam", decoding.DEFAULT_BEAM), cfg.get(
        "candidate_cap", decoding.DEFAULT_CANDIDATE_CAP
    )


def _embedding(cfg: dict, key: str, dim: int, vocab_tokens, seed: int):
    """Pretrained vectors when a path is configured, else random trainable."""
    path = cfg.get(key)
    if path:
        return features.load_word_vectors(path, dim)
    print(
        f"warning: no {key} configured; using randomly initialized trainable embeddings",
        file=sys.stderr,
    )
    vocab = features.build_word_vocab(vocab_tokens)
    return features.random_embeddings(vocab, dim, seed)


def _build_model(examples, cfg: dict, seed: int) -> network.QAModel:
    net_cfg = _network_config(cfg)
    tokens = list(training.corpus_tokens(examples))
    general = _embedding(cfg, "general_vectors", net_cfg.general_dim, tokens, seed)
    domain = _embedding(cfg, "domain_vectors", net_cfg.domain_dim, tokens, seed + 1)
    vocabs = network.Vocabs(
        general=general.vocab,
        domain=domain.vocab,
        char=features.build_char_vocab(tokens),
        general_trainable=general.trainable,
        domain_trainable=domain.trainable,
    )
    return network.QAModel.build(
        net_cfg, vocabs, seed=seed, general_rows=general.rows, domain_rows=domain.rows
    )


def _answerable(questions):
    return [q for q in questions if q.qtype in ("factoid", "list")]


def _dev_eval_fn(questions, phase: str, beam: int, cap: int):
    """Dev metric: factoid MRR for pretraining; mean of MRR and list F1
    (threshold tuned on the same dev set) for fine-tuning."""
    factoid = [q for q in questions if q.qtype == "factoid" and q.gold_answers]
    listq = [q for q in questions if q.qtype == "list" and q.gold_answers]
    if phase == "pretrain":
        listq = []
    if not factoid and not listq:
        return None

    def metric(model):
        parts = []
        if factoid:
            rr = [
                evaluation.score_factoid(
                    decoding.select_factoid(
                        decoding.question_candidates([model], q, beam=beam, cap=cap)
                    ),
                    q.gold_answers,
                )
                for q in factoid
            ]
            parts.append(float(np.mean(rr)))
        if listq:
            dev = [
                (decoding.question_candidates([model], q, beam=beam, cap=cap), q.gold_answers)
                for q in listq
            ]
            threshold = decoding.tune_threshold(dev, tuned_on="dev")
            f1s = [
                evaluation.score_list(decoding.select_list(cands, threshold), gold)[2]
                for cands, gold in dev
            ]
            parts.append(float(np.mean(f1s)))
        return float(np.mean(parts))

    return metric


# -- commands ----------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = _load_config(args.config)
    questions = corpus.load_dataset(args.input, args.format)
    examples, stats = corpus.build_examples(
        questions,
        max_context_tokens=cfg.get("max_context_tokens", corpus.DEFAULT_MAX_CONTEXT_TOKENS),
        overlap=cfg.get("window_overlap", corpus.DEFAULT_WINDOW_OVERLAP),
    )
    kept = [ex for ex in examples if ex.gold_spans]
    corpus.write_examples(args.output, kept)
    summary = dict(stats)
    summary["examples_written"] = len(kept)
    with open(args.output + ".summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _load_models(model_dirs: list[str]) -> list[network.QAModel]:
    models = [network.QAModel.load(d) for d in model_dirs]
    fp = models[0].fingerprint
    for d, m in zip(model_dirs[1:], models[1:]):
        if m.fingerprint != fp:
            raise CliError(f"ensemble member {d} has a different config fingerprint")
    return models


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    seed = _seed(args)
    examples = corpus.read_examples(args.data)
    opt_cfg = _optimizer_config(cfg, args.phase)
    beam, cap = _decode_opts(cfg)

    dev_questions = []
    if args.dev_questions:
        dev_questions = _answerable(corpus.load_dataset(args.dev_questions, args.dev_format))

    def make_dev(questions):
        return _dev_eval_fn(questions, args.phase, beam, cap) if questions else None

    def init_model():
        if args.phase == "finetune":
            init = network.QAModel.load(args.init)
            requested = dataclasses.replace(
                init.cfg, **{k: v for k, v in cfg.items() if k in NETWORK_KEYS}
            )
            training.check_transfer(init, requested, init.vocabs)
            return init
        return _build_model(examples, cfg, seed)

    if args.cv:
        qids = sorted({ex.question_ref for ex in examples})
        plan = training.make_folds(qids, seed, k=args.cv)
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "folds.json"), "w") as f:
            json.dump({"k": plan.k, "assignments": plan.assignments}, f, indent=2, sort_keys=True)
        cv_questions = {}
        if args.questions:
            cv_questions = {
                q.id: q for q in _answerable(corpus.load_dataset(args.questions, args.dev_format))
            }
        for fold in range(plan.k):
            model = init_model()
            train_ex = [ex for ex in examples if plan.assignments[ex.question_ref] != fold]
            fold_dev = [
                cv_questions[qid] for qid in plan.fold_ids(fold) if qid in cv_questions
            ]
            out = os.path.join(args.out, f"fold_{fold}")
            training.train(
                model,
                training.trainable_items(train_ex, model.cfg),
                opt_cfg,
                seed + fold,
                args.phase,
                out,
                dev_eval=make_dev(fold_dev),
                log_path=os.path.join(args.out, f"train_fold_{fold}.log.jsonl"),
                resume=args.resume,
            )
        return 0

    model = init_model()
    result = training.train(
        model,
        training.trainable_items(examples, model.cfg),
        opt_cfg,
        seed,
        args.phase,
        args.out,
        dev_eval=make_dev(dev_questions),
        log_path=args.out.rstrip("/") + ".log.jsonl",
        resume=args.resume,
    )
    print(
        json.dumps(
            {
                "phase": args.phase,
                "steps": result.global_step,
                "final_loss": result.final_loss,
                "best_dev_metric": result.best_dev_metric,
                "checkpoint": args.out,
            },
            sort_keys=True,
        )
    )
    return 0


def _ensemble_members(args) -> list[str]:
    if args.model:
        return [args.model]
    return [d for d in args.ensemble.split(",") if d]


def cmd_tune_threshold(args) -> int:
    cfg = _load_config(args.config)
    beam, cap = _decode_opts(cfg)
    questions = corpus.load_dataset(args.data, args.format)
    listq = [q for q in questions if q.qtype == "list" and q.gold_answers]
    if not listq:
        raise CliError("no list questions with gold answers in the tuning data")

    dev = []
    if args.cv_dir:
        with open(os.path.join(args.cv_dir, "folds.json")) as f:
            plan = json.load(f)
        fold_models = {
            fold: network.QAModel.load(os.path.join(args.cv_dir, f"fold_{fold}"))
            for fold in range(plan["k"])
        }
        # out-of-fold: a question is decoded by the model that held it out
        for q in listq:
            fold = plan["assignments"].get(q.id)
            if fold is None:
                continue
            cands = decoding.question_candidates([fold_models[fold]], q, beam=beam, cap=cap)
            dev.append((cands, q.gold_answers))
        tuned_on = f"{args.data}:out-of-fold"
    else:
        models = _load_models(_ensemble_members(args))
        for q in listq:
            dev.append(
                (decoding.question_candidates(models, q, beam=beam, cap=cap), q.gold_answers)
            )
        tuned_on = args.data
    threshold = decoding.tune_threshold(dev, tuned_on=tuned_on)
    with open(args.out, "w") as f:
        json.dump({"t": threshold.t, "tuned_on": threshold.tuned_on}, f, indent=2)
    print(json.dumps({"t": threshold.t, "tuned_on": threshold.tuned_on}))
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args.config)
    beam, cap = _decode_opts(cfg)
    models = _load_models(_ensemble_members(args))
    questions = corpus.load_dataset(args.input, args.format)
    threshold = None
    if args.threshold_file:
        with open(args.threshold_file) as f:
            td = json.load(f)
        threshold = decoding.ThresholdConfig(t=td["t"], tuned_on=td.get("tuned_on", ""))
    elif any(q.qtype == "list" for q in questions):
        raise CliError(
            "input contains list questions; tune a threshold first and pass --threshold-file"
        )
    out_questions = []
    for q in questions:
        pred = decoding.predict_question(models, q, threshold=threshold, beam=beam, cap=cap)
        if pred is None:
            continue
        if pred.qtype == "factoid":
            exact = pred.factoid_ranked
        elif pred.qtype == "list":
            exact = pred.list_answers
        else:
            exact = pred.yesno
        out_questions.append({"id": pred.question_ref, "type": pred.qtype, "exact_answer": exact})
    payload = {
        "questions": out_questions,
        "meta": {
            "models": _ensemble_members(args),
            "config_fingerprint": models[0].fingerprint,
            "seed": models[0].seed,
        },
    }
    with open(args.output, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    print(f"wrote {len(out_questions)} predictions to {args.output}")
    return 0


def cmd_evaluate(args) -> int:
    gold_questions = corpus.load_dataset(args.gold, args.format)
    with open(args.predictions) as f:
        preds = {p["id"]: p for p in json.load(f).get("questions", [])}
    scores = []
    for q in gold_questions:
        if q.qtype not in ("factoid", "list") or not q.gold_answers:
            continue
        pred = preds.get(q.id)
        batch = getattr(q, "batch", None)
        if q.qtype == "factoid":
            ranked = pred["exact_answer"] if pred else []
            scores.append(
                evaluation.QuestionScore(
                    q.id,
                    "factoid",
                    batch=batch,
                    reciprocal_rank=evaluation.score_factoid(ranked, q.gold_answers),
                )
            )
        else:
            answers = pred["exact_answer"] if pred else []
            p, r, f1 = evaluation.score_list(answers, q.gold_answers)
            scores.append(
                evaluation.QuestionScore(
                    q.id, "list", batch=batch, precision=p, recall=r, f1=f1
                )
            )
    if not scores:
        raise CliError("gold dataset contains no scorable questions with gold answers")
    report = evaluation.build_report(scores)
    print(evaluation.render_text(report))
    if args.out_json:
        with open(args.out_json, "w") as f:
            f.write(evaluation.report_to_json(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spanqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="tokenize and span-label a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["bioasq", "squad"], required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="pretrain or fine-tune the span scorer")
    p.add_argument("--phase", choices=["pretrain", "finetune"], required=True)
    p.add_argument("--data", required=True, help="labeled examples (jsonl)")
    p.add_argument("--init", help="checkpoint to fine-tune from")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cv", type=int, help="train K cross-validation fold models")
    p.add_argument("--questions", help="question file for CV fold dev metrics")
    p.add_argument("--dev-questions", help="question file for early stopping")
    p.add_argument("--dev-format", choices=["bioasq", "squad"], default="bioasq")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune-threshold", help="tune the list-answer cutoff")
    p.add_argument("--model")
    p.add_argument("--ensemble", help="comma-separated checkpoint dirs")
    p.add_argument("--cv-dir", help="CV output dir for out-of-fold tuning")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["bioasq", "squad"], default="bioasq")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune_threshold)

    p = sub.add_parser("predict", help="answer questions with a model or ensemble")
    p.add_argument("--model")
    p.add_argument("--ensemble", help="comma-separated checkpoint dirs")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["bioasq", "squad"], default="bioasq")
    p.add_argument("--threshold-file")
    p.add_argument("--config")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold answers")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--format", choices=["bioasq", "squad"], default="bioasq")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and args.phase == "finetune" and not args.init:
        parser.error("--init is required for --phase finetune")
    if args.command in ("tune-threshold", "predict"):
        picks = [bool(args.model), bool(args.ensemble), bool(getattr(args, "cv_dir", None))]
        if sum(picks) != 1:
            parser.error("pass exactly one of --model / --ensemble" +
                         (" / --cv-dir" if args.command == "tune-threshold" else ""))
    try:
        return args.func(args)
    except (
        CliError,
        corpus.DatasetError,
        features.WordVectorFormatError,
        training.TransferError,
        training.TrainingDiverged,
        evaluation.UndefinedGoldError,
        FileNotFoundError,
        ValueError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
