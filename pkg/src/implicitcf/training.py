"""Binary cross-entropy objective and the mini-batch training loop.

Negatives are resampled every epoch (optionally every batch), the pooled
instances are shuffled with a per-epoch generator derived from the master
seed, and gradients are mean-reduced within each batch so the learning rate
is independent of batch size.  Runs are deterministic for a fixed seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import models
from .data import (
    EpochBatchSet,
    InteractionMatrix,
    SplitDataset,
    TestCase,
    sample_negatives_for_user,
    sample_train_negatives,
)
from .kernels import AdamState, adam_step, sgd_step

logger = logging.getLogger(__name__)

OPTIMIZER_ADAM = "adam"
OPTIMIZER_SGD = "sgd"

RESAMPLE_EPOCH = "epoch"
RESAMPLE_BATCH = "batch"

# Stream tags deriving independent generators from the master seed.
STREAM_INIT = 0
STREAM_TEST_NEGATIVES = 1
STREAM_EPOCH = 2
STREAM_SWEEP = 3


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; the message reports the offending batch."""


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 0.001
    optimizer: str = OPTIMIZER_ADAM
    epochs: int = 20
    negative_ratio: int = 4
    seed: int = 42
    eval_every: int = 1
    patience: int | None = None
    neg_resample: str = RESAMPLE_EPOCH
    init_stddev: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.optimizer not in (OPTIMIZER_ADAM, OPTIMIZER_SGD):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.neg_resample not in (RESAMPLE_EPOCH, RESAMPLE_BATCH):
            raise ValueError(f"unknown resample mode {self.neg_resample!r}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Generator for one epoch's sampling and shuffling."""
    return np.random.default_rng([seed, STREAM_EPOCH, epoch])


def bce_loss(logits, labels):
    """Per-instance binary cross-entropy of sigmoid(logit) against the label,
    evaluated from the logit so saturated predictions stay finite."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def bce_grad_logit(probabilities, labels):
    """Gradient of the sigmoid-BCE composite w.r.t. the logit."""
    return np.asarray(probabilities) - np.asarray(labels)


@dataclass
class HistoryEntry:
    epoch: int
    loss: float
    hr: float | None = None
    ndcg: float | None = None
    seconds: float = 0.0


@dataclass
class TrainHistory:
    """Per-epoch record plus the loss of the untouched initial model."""

    initial_loss: float = float("nan")
    initial_hr: float | None = None
    initial_ndcg: float | None = None
    entries: list[HistoryEntry] = field(default_factory=list)
    best_epoch: int = 0
    best_hr: float = -1.0

    def log_lines(self) -> list[str]:
        """Training-log rows: epoch, mean loss and, when evaluated, HR/NDCG."""
        def fmt(epoch, loss, hr, ndcg):
            line = f"{epoch}\t{loss:.6f}"
            if hr is not None:
                line += f"\t{hr:.6f}\t{ndcg:.6f}"
            return line

        lines = [fmt(0, self.initial_loss, self.initial_hr, self.initial_ndcg)]
        lines.extend(fmt(e.epoch, e.loss, e.hr, e.ndcg) for e in self.entries)
        return lines

    def timing_lines(self) -> list[str]:
        return [f"{e.epoch}\t{e.seconds:.3f}" for e in self.entries]


def _iter_batches(batchset: EpochBatchSet, order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]


def _run_batch(params: models.ModelParams, train: InteractionMatrix,
               users: np.ndarray, items: np.ndarray, labels: np.ndarray):
    rows = [train.user_items[u] for u in users]
    cols = [train.item_users[i] for i in items]
    probs, logits, cache = models.forward(params, rows, cols)
    losses = bce_loss(logits, labels)
    return probs, losses, cache


def mean_loss(params: models.ModelParams, train: InteractionMatrix,
              batchset: EpochBatchSet, batch_size: int = 4096) -> float:
    """Mean per-instance loss over a batch set, without updates."""
    total = 0.0
    for start in range(0, len(batchset), batch_size):
        sl = slice(start, start + batch_size)
        _, losses, _ = _run_batch(params, train, batchset.users[sl],
                                  batchset.items[sl], batchset.labels[sl])
        total += float(losses.sum())
    return total / max(1, len(batchset))


def _batch_negatives(train: InteractionMatrix, pos_users: np.ndarray,
                     pos_items: np.ndarray, ratio: int,
                     rng: np.random.Generator) -> EpochBatchSet:
    """Fresh negatives for one batch of positives (per-batch resample mode)."""
    users = [pos_users]
    items = [pos_items]
    labels = [np.ones(pos_users.size)]
    unique_users, counts = np.unique(pos_users, return_counts=True)
    for user, cnt in zip(unique_users, counts):
        n_neg = int(cnt) * ratio
        if n_neg == 0 or train.user_items[user].size >= train.num_items:
            continue
        negs = sample_negatives_for_user(train, int(user), n_neg, rng)
        users.append(np.full(n_neg, user, dtype=np.int64))
        items.append(negs)
        labels.append(np.zeros(n_neg))
    return EpochBatchSet(users=np.concatenate(users), items=np.concatenate(items),
                         labels=np.concatenate(labels))


def train_epoch(params: models.ModelParams, train: InteractionMatrix,
                config: TrainConfig, opt_state: AdamState | None,
                rng: np.random.Generator, epoch: int = 0) -> float:
    """One pass: resample negatives, shuffle, and update per mini-batch.

    Returns the mean per-instance loss across the epoch.
    """
    total_loss = 0.0
    total_count = 0

    def apply(users, items, labels, batch_index):
        nonlocal total_loss, total_count
        probs, losses, cache = _run_batch(params, train, users, items, labels)
        batch_sum = float(losses.sum())
        if not np.isfinite(batch_sum):
            raise TrainingDivergedError(
                f"non-finite loss in epoch {epoch}, batch {batch_index} "
                f"({users.size} instances)")
        total_loss += batch_sum
        total_count += users.size
        dlogits = bce_grad_logit(probs, labels) / users.size
        grads = models.backward(params, cache, dlogits)
        if config.optimizer == OPTIMIZER_ADAM:
            adam_step(params.tensors, grads, opt_state, config.learning_rate)
        else:
            sgd_step(params.tensors, grads, config.learning_rate)

    if config.neg_resample == RESAMPLE_EPOCH:
        batchset = sample_train_negatives(train, config.negative_ratio, rng)
        order = rng.permutation(len(batchset))
        for b, idx in enumerate(_iter_batches(batchset, order, config.batch_size)):
            apply(batchset.users[idx], batchset.items[idx], batchset.labels[idx], b)
    else:
        positives = sample_train_negatives(train, 0, rng)
        order = rng.permutation(len(positives))
        pos_per_batch = max(1, config.batch_size // (1 + config.negative_ratio))
        for b, idx in enumerate(_iter_batches(positives, order, pos_per_batch)):
            batch = _batch_negatives(train, positives.users[idx],
                                     positives.items[idx],
                                     config.negative_ratio, rng)
            apply(batch.users, batch.items, batch.labels, b)

    return total_loss / max(1, total_count)


def train(params: models.ModelParams, split: SplitDataset,
          test_cases: list[TestCase] | None, config: TrainConfig,
          k: int = 10) -> tuple[models.ModelParams, TrainHistory]:
    """Full training run with periodic ranking evaluation.

    Records the initial-model loss (and metrics, when test cases are given)
    before any update, then trains ``config.epochs`` epochs, tracking the
    best parameters by HR@k.  Returns the best parameters seen (the final
    ones if never evaluated) and the history.
    """
    from . import evaluation  # local import: evaluation depends on models only

    history = TrainHistory()
    opt_state = None
    if config.optimizer == OPTIMIZER_ADAM:
        opt_state = AdamState.for_params(params.tensors, beta1=config.adam_beta1,
                                         beta2=config.adam_beta2, eps=config.adam_eps)

    def run_eval(model_params):
        report = evaluation.evaluate(
            evaluation.model_score_fn(model_params, split.train), test_cases, k=k)
        return report.hr, report.ndcg

    initial_set = sample_train_negatives(split.train, config.negative_ratio,
                                         epoch_rng(config.seed, 0))
    history.initial_loss = mean_loss(params, split.train, initial_set)
    if test_cases:
        history.initial_hr, history.initial_ndcg = run_eval(params)
    logger.info("initial loss %.4f", history.initial_loss)

    best_params = params
    evals_since_best = 0
    for epoch in range(1, config.epochs + 1):
        tic = time.perf_counter()
        loss = train_epoch(params, split.train, config, opt_state,
                           epoch_rng(config.seed, epoch), epoch)
        entry = HistoryEntry(epoch=epoch, loss=loss)
        if test_cases and (epoch % config.eval_every == 0 or epoch == config.epochs):
            entry.hr, entry.ndcg = run_eval(params)
            if entry.hr > history.best_hr:
                history.best_hr = entry.hr
                history.best_epoch = epoch
                best_params = params.copy()
                evals_since_best = 0
            else:
                evals_since_best += 1
        entry.seconds = time.perf_counter() - tic
        history.entries.append(entry)
        logger.info("epoch %d loss %.4f hr %s ndcg %s (%.1fs)", epoch, loss,
                    f"{entry.hr:.4f}" if entry.hr is not None else "-",
                    f"{entry.ndcg:.4f}" if entry.ndcg is not None else "-",
                    entry.seconds)
        if config.patience is not None and evals_since_best > config.patience:
            logger.info("early stop at epoch %d (no HR improvement)", epoch)
            break

    if history.best_hr < 0:
        best_params = params
    return best_params, history
