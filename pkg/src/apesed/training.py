"""The optimization loop: Adam over per-clip (or padded-batch) gradient
steps, early stopping on validation weighted F1, and checkpoint-based
resumption.

Reproducibility contract: a (corpus, split, configs, seed) tuple fully
determines the run. Three independent RNG streams derive from the seed:
parameter init uses the seed itself, epoch shuffling uses [seed, 1], and
dropout masks use [seed, 2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .annotations import BINARY_VOCAB, to_binary
from .dataset import Corpus, Split, class_occurrences, load_pairs
from .errors import BadConfig, DivergenceError, EmptySplit, IncompatibleCheckpoint
from .metrics import evaluate
from .neural.autodiff import Tape
from .neural.checkpoint import load_checkpoint
from .neural.model import (
    ModelConfig,
    SequenceModel,
    build_loss,
    class_weights,
    forward,
    init,
)

CLIP_NORM = 5.0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1
    dropout: float = 0.4
    max_epochs: int = 200
    patience: int = 20
    learning_rate: float = 1e-4
    seed: int = 0
    balance_weights: bool = True
    binary: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise BadConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise BadConfig(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise BadConfig(f"patience must be >= 1, got {self.patience}")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # {epoch, train_loss, val_accuracy, val_weighted_f1}
    best_epoch: int = 0
    best_val_f1: float = -1.0
    stopped_reason: str = ""
    clip_events: int = 0
    baseline_val_f1: float | None = None  # set by resume()

    def to_dict(self) -> dict:
        return {
            "records": self.records,
            "best_epoch": self.best_epoch,
            "best_val_f1": self.best_val_f1,
            "stopped_reason": self.stopped_reason,
            "clip_events": self.clip_events,
            "baseline_val_f1": self.baseline_val_f1,
        }


class Adam:
    """Adam with bias correction; one slot pair per parameter."""

    def __init__(self, model: SequenceModel, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in model.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in model.params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.model.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = CLIP_NORM) -> bool:
    """Scale gradients to a global norm of max_norm when they exceed it."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return False
    factor = max_norm / total
    for name in grads:
        grads[name] = grads[name] * factor
    return True


def _prepare_pairs(corpus: Corpus, ids, binary: bool):
    pairs = load_pairs(corpus, list(ids))
    if binary:
        pairs = [(fm, to_binary(lt)) for fm, lt in pairs]
    return pairs


def _epoch_step(model, pairs, order, batch_size, weights, drop_rng, adam, log,
                epoch):
    losses = []
    for i in range(0, len(order), batch_size):
        batch = [pairs[j] for j in order[i:i + batch_size]]
        feats = [fm for fm, _ in batch]
        labels = [lt for _, lt in batch]
        model.zero_grads()
        tape = Tape()
        out = build_loss(model, feats, labels, weights, tape,
                         train_mode=True, rng=drop_rng)
        value = float(out.data)
        if not math.isfinite(value):
            ids = ",".join(fm.clip_id for fm in feats)
            raise DivergenceError(f"non-finite loss at epoch {epoch}, clip(s) {ids}")
        tape.backward(out)
        grads = {}
        for name, p in model.params.items():
            grads[name] = np.zeros_like(p.data) if p.grad is None else p.grad
            p.grad = None
        if clip_gradients(grads):
            log.clip_events += 1
        adam.step(grads)
        losses.append(value)
    return float(np.mean(losses))


def _validate_f1(model, val_pairs):
    preds = [forward(model, fm, train_mode=False) for fm, _ in val_pairs]
    report = evaluate(preds, [lt for _, lt in val_pairs])
    return report.accuracy, report.weighted_f1


def _fit(model, train_pairs, val_pairs, weights, train_config, log,
         start_epoch, best_f1, best_epoch):
    shuffle_rng = np.random.default_rng([train_config.seed, 1])
    drop_rng = np.random.default_rng([train_config.seed, 2])
    adam = Adam(model, train_config.learning_rate)
    best_params = {k: p.data.copy() for k, p in model.params.items()}
    # Burn shuffle draws so a resumed run sees the same epoch orderings a
    # fresh run would have seen at the same epoch numbers.
    for _ in range(start_epoch - 1):
        shuffle_rng.permutation(len(train_pairs))

    since_best = 0
    log.stopped_reason = "max_epochs"
    for epoch in range(start_epoch, train_config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_pairs))
        train_loss = _epoch_step(model, train_pairs, order,
                                 train_config.batch_size, weights, drop_rng,
                                 adam, log, epoch)
        val_acc, val_f1 = _validate_f1(model, val_pairs)
        log.records.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_accuracy": val_acc,
            "val_weighted_f1": val_f1,
        })
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.patience:
                log.stopped_reason = "patience"
                break
    for k, p in model.params.items():
        p.data = best_params[k]
    log.best_epoch = best_epoch
    log.best_val_f1 = best_f1
    return model, log


def train(corpus: Corpus, split: Split, model_config: ModelConfig,
          train_config: TrainConfig) -> tuple[SequenceModel, TrainLog]:
    """Fit a model on the split's train set, early-stopping on validation
    weighted F1; returns the parameters from the best epoch."""
    if not split.train or not split.val:
        raise EmptySplit("split has an empty train or val partition")
    expected = 2 if train_config.binary else corpus.vocab.num_classes + 1
    if model_config.num_class != expected:
        raise BadConfig(
            f"model has num_class {model_config.num_class}, corpus needs {expected}"
        )
    train_pairs = _prepare_pairs(corpus, split.train, train_config.binary)
    val_pairs = _prepare_pairs(corpus, split.val, train_config.binary)
    counts = class_occurrences(train_pairs)
    weights = class_weights(counts, balance=train_config.balance_weights)
    model_config = replace(model_config, dropout=train_config.dropout)
    model = init(model_config, train_config.seed)
    log = TrainLog()
    return _fit(model, train_pairs, val_pairs, weights, train_config, log,
                start_epoch=1, best_f1=-1.0, best_epoch=0)


def resume(checkpoint_path: str | Path, corpus: Corpus, split: Split,
           train_config: TrainConfig) -> tuple[SequenceModel, TrainLog]:
    """Continue training from a checkpoint.

    The epoch counter picks up where the checkpoint left off; optimizer
    moments are rebuilt from zero, a documented limitation of the format.
    """
    model, meta = load_checkpoint(checkpoint_path)
    expected = 2 if train_config.binary else corpus.vocab.num_classes + 1
    if model.config.num_class != expected:
        raise IncompatibleCheckpoint(
            f"checkpoint has num_class {model.config.num_class}, "
            f"corpus needs {expected}"
        )
    if meta["feature_kind"] != corpus.feature_kind:
        raise IncompatibleCheckpoint(
            f"checkpoint features are {meta['feature_kind']}, "
            f"corpus is {corpus.feature_kind}"
        )
    if not split.train or not split.val:
        raise EmptySplit("split has an empty train or val partition")
    train_pairs = _prepare_pairs(corpus, split.train, train_config.binary)
    val_pairs = _prepare_pairs(corpus, split.val, train_config.binary)
    counts = class_occurrences(train_pairs)
    weights = class_weights(counts, balance=train_config.balance_weights)

    log = TrainLog()
    val_acc, val_f1 = _validate_f1(model, val_pairs)
    log.baseline_val_f1 = val_f1
    start = int(meta["epoch"]) + 1
    if start > train_config.max_epochs:
        log.best_epoch = int(meta["epoch"])
        log.best_val_f1 = val_f1
        log.stopped_reason = "resume_complete"
        return model, log
    return _fit(model, train_pairs, val_pairs, weights, train_config, log,
                start_epoch=start, best_f1=val_f1, best_epoch=int(meta["epoch"]))
