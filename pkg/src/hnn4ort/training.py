"""Seeded training loop: Adam on mean CRF NLL, plateau learning-rate decay,
early stopping on validation loss, best-epoch restore.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .corpus import CorpusRecord, Vocab, build_vocabs
from .errors import InputError, TrainingDiverged
from .evaluation import prf
from .model import Model, ModelConfig, batch_loss, gold_extraction, make_batch, predict_records

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_precision: float
    val_recall: float
    val_f1: float
    lr: float

    def as_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: Sequence[nc.Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad**2
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauSchedule:
    """Learning-rate decay and early stopping driven by one monitored loss.

    After ``lr_patience`` consecutive epochs without a new best, the rate is
    multiplied by ``factor`` and that counter restarts; after
    ``stop_patience`` such epochs, ``should_stop`` turns true.
    """

    def __init__(self, lr: float, factor: float, lr_patience: int, stop_patience: int):
        self.lr = lr
        self.factor = factor
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.best = np.inf
        self.since_decay = 0
        self.since_best = 0

    def update(self, value: float) -> bool:
        """Record an epoch's loss; returns True when it is a new best."""
        if value < self.best:
            self.best = value
            self.since_decay = self.since_best = 0
            return True
        self.since_decay += 1
        self.since_best += 1
        if self.since_decay >= self.lr_patience:
            self.lr *= self.factor
            self.since_decay = 0
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.stop_patience


def _batches(records, size):
    return [records[i : i + size] for i in range(0, len(records), size)]


def evaluate_loss(model: Model, records: Sequence[CorpusRecord], batch_size: int = 64) -> float:
    total = 0.0
    with nc.no_tape():
        for chunk in _batches(list(records), batch_size):
            total += batch_loss(model, make_batch(model, chunk)).item() * len(chunk)
    return total / len(records)


def _snapshot(model: Model) -> list[np.ndarray]:
    return [t.data.copy() for t in model.params.tensors()]


def _restore(model: Model, snapshot: list[np.ndarray]) -> None:
    for t, saved in zip(model.params.tensors(), snapshot):
        t.data[...] = saved


def train(
    config: ModelConfig,
    train_records: Sequence[CorpusRecord],
    val_records: Sequence[CorpusRecord],
    words: Vocab | None = None,
    pos: Vocab | None = None,
    word_vectors: np.ndarray | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[Model, list[EpochStats]]:
    """Fit a model and return it at its best validation-loss epoch.

    Everything random (init, shuffling, dropout masks) derives from
    ``config.seed``, so equal inputs give bitwise-equal histories.
    """
    if not train_records or not val_records:
        raise InputError("train and validation splits must both be non-empty")
    if words is None or pos is None:
        w, p = build_vocabs(train_records)
        words, pos = words or w, pos or p
    init_rng = np.random.default_rng([config.seed, 0])
    order_rng = np.random.default_rng([config.seed, 1])
    model = Model.create(config, words, pos, rng=init_rng, word_vectors=word_vectors)
    opt = Adam(model.params.tensors())
    schedule = PlateauSchedule(config.lr, config.lr_factor, config.lr_patience, config.early_stop_patience)
    gold = [gold_extraction(r) for r in val_records]
    train_records = list(train_records)
    history: list[EpochStats] = []
    best = _snapshot(model)

    for epoch in range(1, config.max_epochs + 1):
        lr = schedule.lr
        order = order_rng.permutation(len(train_records))
        total = 0.0
        for step, idx in enumerate(_batches(order, config.batch_size)):
            batch = make_batch(model, [train_records[i] for i in idx])
            opt.zero_grad()
            with nc.Tape() as tape:
                loss = batch_loss(model, batch, training=True, seed=int(order_rng.integers(2**32)))
            value = loss.item()
            if not np.isfinite(value):
                norms = {n: float(np.linalg.norm(t.data)) for n, t in model.params.named_tensors()}
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch {step}, lr {lr}; "
                    f"parameter norms {norms}"
                )
            nc.backward(tape, loss)
            opt.step(lr)
            total += value * len(idx)

        val_loss = evaluate_loss(model, val_records)
        report = prf(predict_records(model, val_records), gold, "exact_span")
        stats = EpochStats(epoch, total / len(train_records), val_loss,
                           report.precision, report.recall, report.f1, lr)
        history.append(stats)
        log.info("epoch %d train %.4f val %.4f f1 %.4f lr %g", epoch, stats.train_loss,
                 val_loss, report.f1, lr)
        if on_epoch is not None:
            on_epoch(stats)
        if schedule.update(val_loss):
            best = _snapshot(model)
        if schedule.should_stop:
            break

    _restore(model, best)
    return model, history
