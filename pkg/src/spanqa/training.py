"""Two-phase optimization: pretraining on the large open-domain set and
fine-tuning on the biomedical set, with Adam, an exponentially decaying
learning rate, early stopping, resumable epochs, and 5-fold CV splits."""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field

import torch

from .corpus import LabeledExample, Question, Span, tokenize
from .network import NetworkConfig, QAModel, Vocabs, config_fingerprint, loss_torch

PRETRAIN_LR = 1e-3
FINETUNE_LR = 1e-4
CV_FOLDS = 5


class TrainingDiverged(RuntimeError):
    pass


class TransferError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    initial_lr: float = PRETRAIN_LR
    decay_factor: float = 0.5
    decay_unit: str = "epoch"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 10
    patience: int = 3
    max_steps: int | None = None  # optional hard cap, used by smoke tests

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must lie in (0, 1]")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.decay_unit != "epoch":
            raise ValueError("only per-epoch decay is supported")


def default_config(phase: str) -> OptimizerConfig:
    lr = PRETRAIN_LR if phase == "pretrain" else FINETUNE_LR
    return OptimizerConfig(initial_lr=lr)


def lr_schedule(initial_lr: float, decay_factor: float, epoch: int) -> float:
    return initial_lr * decay_factor**epoch


@dataclass
class FoldPlan:
    k: int
    assignments: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.assignments.items() if f == fold)


def make_folds(ids: list[str], seed: int, k: int = CV_FOLDS) -> FoldPlan:
    """Deterministic balanced partition; model m's dev set is fold m."""
    if len(ids) < k:
        raise ValueError(f"need at least {k} question ids, got {len(ids)}")
    order = sorted(ids)
    random.Random(seed).shuffle(order)
    base, rem = divmod(len(order), k)
    assignments = {}
    pos = 0
    for fold in range(k):
        size = base + (1 if fold < rem else 0)
        for qid in order[pos : pos + size]:
            assignments[qid] = fold
        pos += size
    return FoldPlan(k=k, assignments=assignments)


@dataclass
class TrainItem:
    question_tokens: list[str]
    context_tokens: list[str]
    qtype: str
    gold_spans: list[Span]


def trainable_items(examples: list[LabeledExample], cfg: NetworkConfig) -> list[TrainItem]:
    """Keep only examples with at least one gold span that fits the model's
    span-length and context-length limits."""
    items = []
    for ex in examples:
        if ex.context.n > cfg.max_context_tokens:
            continue
        spans = [
            s
            for s in ex.gold_spans
            if s.end - s.start < cfg.max_span and s.end < ex.context.n
        ]
        if not spans:
            continue
        items.append(
            TrainItem(
                question_tokens=[t.surface for t in tokenize(ex.question_body).tokens],
                context_tokens=[t.surface for t in ex.context.tokens],
                qtype=ex.qtype,
                gold_spans=spans,
            )
        )
    return items


def corpus_tokens(examples: list[LabeledExample]):
    for ex in examples:
        yield from (t.surface for t in tokenize(ex.question_body).tokens)
        yield from (t.surface for t in ex.context.tokens)


@dataclass
class TrainResult:
    model: QAModel
    epochs_run: int
    final_loss: float | None
    best_dev_metric: float | None
    global_step: int


def _batch_loss(model: QAModel, batch: list[TrainItem]) -> torch.Tensor:
    losses = []
    for item in batch:
        y_start, rows = model.scorer(item.question_tokens, item.context_tokens, item.qtype)
        losses.append(loss_torch(y_start, rows, item.gold_spans))
    return torch.stack(losses).mean()


def train(
    model: QAModel,
    items: list[TrainItem],
    cfg: OptimizerConfig,
    seed: int,
    phase: str,
    out_dir: str,
    dev_eval=None,
    log_path: str | None = None,
    resume: bool = False,
) -> TrainResult:
    """Run Adam with lr(epoch) = initial_lr * decay_factor^epoch.

    The best-dev checkpoint (final parameters when there is no dev_eval) is
    written to out_dir; a resumable state snapshot is written after every
    epoch so an interrupted run can continue identically.
    """
    if not items and cfg.max_epochs > 0:
        raise ValueError("no trainable examples")
    optimizer = torch.optim.Adam(
        model.scorer.parameters(),
        lr=cfg.initial_lr,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )
    start_epoch = 0
    global_step = 0
    best_metric = None
    best_state = {k: v.clone() for k, v in model.scorer.state_dict().items()}
    epochs_since_improve = 0
    # kept next to (not inside) the checkpoint dir, which is replaced on save
    resume_path = out_dir.rstrip("/") + ".resume.pt"
    parent = os.path.dirname(os.path.abspath(out_dir))
    os.makedirs(parent, exist_ok=True)
    if resume and os.path.exists(resume_path):
        snap = torch.load(resume_path, weights_only=False)
        model.scorer.load_state_dict(snap["model"])
        optimizer.load_state_dict(snap["optimizer"])
        start_epoch = snap["epoch"]
        global_step = snap["global_step"]
        best_metric = snap["best_metric"]
        best_state = snap["best_state"]
        epochs_since_improve = snap["epochs_since_improve"]

    log_f = open(log_path, "a") if log_path else None

    def log(event: dict):
        if log_f:
            log_f.write(json.dumps(event, sort_keys=True) + "\n")
            log_f.flush()

    final_loss = None
    epoch = start_epoch
    stopped = False
    try:
        for epoch in range(start_epoch, cfg.max_epochs):
            lr = lr_schedule(cfg.initial_lr, cfg.decay_factor, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = list(range(len(items)))
            random.Random(f"{seed}:{epoch}").shuffle(order)
            for lo in range(0, len(order), cfg.batch_size):
                batch = [items[i] for i in order[lo : lo + cfg.batch_size]]
                optimizer.zero_grad(set_to_none=True)
                value = _batch_loss(model, batch)
                if not torch.isfinite(value):
                    model.phase = phase
                    model.save(out_dir)  # last finite parameters
                    raise TrainingDiverged(
                        f"non-finite loss at step {global_step}; last finite checkpoint kept"
                    )
                value.backward()
                optimizer.step()
                global_step += 1
                final_loss = float(value.detach())
                log(
                    {
                        "step": global_step,
                        "epoch": epoch,
                        "lr": lr,
                        "loss": final_loss,
                        "dev_metric": None,
                    }
                )
                if cfg.max_steps is not None and global_step >= cfg.max_steps:
                    stopped = True
                    break
            metric = None
            if dev_eval is not None and not stopped:
                metric = float(dev_eval(model))
                log(
                    {
                        "step": global_step,
                        "epoch": epoch,
                        "lr": lr,
                        "loss": final_loss,
                        "dev_metric": metric,
                    }
                )
                if best_metric is None or metric > best_metric:
                    best_metric = metric
                    best_state = {k: v.clone() for k, v in model.scorer.state_dict().items()}
                    epochs_since_improve = 0
                else:
                    epochs_since_improve += 1
            else:
                best_state = {k: v.clone() for k, v in model.scorer.state_dict().items()}
            torch.save(
                {
                    "model": model.scorer.state_dict(),
                    "optimizer": optimizer.state_dict(),
                    "epoch": epoch + 1,
                    "global_step": global_step,
                    "best_metric": best_metric,
                    "best_state": best_state,
                    "epochs_since_improve": epochs_since_improve,
                },
                resume_path,
            )
            if stopped or (dev_eval is not None and epochs_since_improve >= cfg.patience):
                break
    finally:
        if log_f:
            log_f.close()

    model.scorer.load_state_dict(best_state)
    model.phase = phase
    model.extra = dict(model.extra)
    model.extra.update({"best_dev_metric": best_metric, "global_step": global_step})
    model.save(out_dir)
    return TrainResult(
        model=model,
        epochs_run=epoch - start_epoch + (1 if cfg.max_epochs > start_epoch else 0),
        final_loss=final_loss,
        best_dev_metric=best_metric,
        global_step=global_step,
    )


def check_transfer(init: QAModel, cfg: NetworkConfig, vocabs: Vocabs) -> None:
    """Fine-tuning requires the exact architecture of the pretrained model."""
    expected = config_fingerprint(cfg, vocabs)
    if init.fingerprint == expected:
        return
    diffs = []
    for name, value in vars(cfg).items():
        if getattr(init.cfg, name) != value:
            diffs.append(f"{name}: checkpoint={getattr(init.cfg, name)} requested={value}")
    for name in ("general", "domain", "char"):
        a = len(getattr(init.vocabs, name))
        b = len(getattr(vocabs, name))
        if a != b:
            diffs.append(f"{name}_vocab_size: checkpoint={a} requested={b}")
    raise TransferError("config fingerprint mismatch: " + "; ".join(diffs or ["unknown"]))


def pretrain(
    model: QAModel,
    examples: list[LabeledExample],
    cfg: OptimizerConfig,
    seed: int,
    out_dir: str,
    dev_eval=None,
    log_path: str | None = None,
    resume: bool = False,
) -> TrainResult:
    items = trainable_items(examples, model.cfg)
    return train(model, items, cfg, seed, "pretrain", out_dir, dev_eval, log_path, resume)


def finetune(
    init: QAModel,
    examples: list[LabeledExample],
    cfg: OptimizerConfig,
    seed: int,
    out_dir: str,
    dev_eval=None,
    log_path: str | None = None,
    resume: bool = False,
) -> TrainResult:
    """Full parameter transfer from the pretrained checkpoint, then training
    with the fine-tuning learning rate."""
    items = trainable_items(examples, init.cfg)
    return train(init, items, cfg, seed, "finetune", out_dir, dev_eval, log_path, resume)
