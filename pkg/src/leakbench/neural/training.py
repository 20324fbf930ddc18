"""Momentum SGD training loop with frequent validation and early stopping,
and the classifier / regressor / extractor built on it."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from leakbench.dataset import FeatureSet
from leakbench.errors import ConfigError, DivergenceError
from leakbench.neural import mlp
from leakbench.neural.binning import bin_mos
from leakbench.splits import TRAIN, VALIDATION, SplitPlan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 30
    validation_every_n_samples: int = 1600
    patience: int = 5
    lr_drop_factor: float = 0.1
    max_lr_drops: int = 1
    epoch_lr_decay: float = 1.0
    head_lr_multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        for name in ("batch_size", "max_epochs", "validation_every_n_samples", "patience"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0.0 < self.lr_drop_factor <= 1.0:
            raise ConfigError("lr_drop_factor must lie in (0, 1]")
        if not 0.0 < self.epoch_lr_decay <= 1.0:
            raise ConfigError("epoch_lr_decay must lie in (0, 1]")
        if not self.head_lr_multiplier > 0:
            raise ConfigError("head_lr_multiplier must be positive")
        if self.max_lr_drops < 0:
            raise ConfigError("max_lr_drops must be non-negative")

    @classmethod
    def from_dict(cls, raw) -> "TrainSchedule":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ValidationPoint:
    iteration: int
    samples_seen: int
    epoch: int
    learning_rate: float
    train_loss: float
    val_loss: float
    val_accuracy: float | None = None


@dataclass
class TrainingTrace:
    points: list[ValidationPoint] = field(default_factory=list)
    best_index: int = -1
    epoch_learning_rates: list[float] = field(default_factory=list)
    stop_reason: str = ""
    per_epoch_validation: bool = False

    @property
    def best(self) -> ValidationPoint:
        return self.points[self.best_index]

    def to_json(self) -> dict:
        return {
            "points": [asdict(p) for p in self.points],
            "best_index": self.best_index,
            "epoch_learning_rates": self.epoch_learning_rates,
            "stop_reason": self.stop_reason,
            "per_epoch_validation": self.per_epoch_validation,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class MomentumSGD:
    """Heavy-ball update: v <- momentum * v - lr * scale * g; p <- p + v."""

    def __init__(self, params: Sequence[np.ndarray], momentum: float, scales: Sequence[float] | None = None):
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]
        self.scales = list(scales) if scales is not None else [1.0] * len(params)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float):
        for p, g, v, s in zip(params, grads, self.velocity, self.scales):
            v *= self.momentum
            v -= (lr * s) * g
            p += v


def fit(
    params: list[np.ndarray],
    param_scales: Sequence[float],
    n_train: int,
    batch_loss_grad: Callable[[np.ndarray], tuple[float, list[np.ndarray]]],
    evaluate: Callable[[], tuple[float, float | None]],
    schedule: TrainSchedule,
    rng: np.random.Generator,
    epoch_batches: Callable[[int], Iterator[np.ndarray]] | None = None,
) -> tuple[list[np.ndarray], TrainingTrace]:
    """Generic mini-batch loop shared by every learner.

    ``params`` are updated in place; the returned list is a copy of the
    parameters at the validation point with the lowest validation loss.
    Training stops after ``patience`` validations without a new minimum once
    the allowed learning-rate drops are used up, or at ``max_epochs``.
    """
    if n_train < 1:
        raise ConfigError("empty training partition")
    trace = TrainingTrace()
    every = int(schedule.validation_every_n_samples)
    if every >= n_train:
        every = n_train
        trace.per_epoch_validation = True
    opt = MomentumSGD(params, schedule.momentum, param_scales)
    lr = schedule.learning_rate
    best_loss = math.inf
    best_params = [p.copy() for p in params]
    stale = 0
    drops = 0
    iteration = 0
    samples = 0
    since_val = 0
    running: list[float] = []

    if epoch_batches is None:
        def epoch_batches(_epoch):
            order = rng.permutation(n_train)
            for start in range(0, n_train, schedule.batch_size):
                yield order[start : start + schedule.batch_size]

    for epoch in range(schedule.max_epochs):
        trace.epoch_learning_rates.append(lr)
        for batch in epoch_batches(epoch):
            loss, grads = batch_loss_grad(batch)
            iteration += 1
            if not math.isfinite(loss):
                raise DivergenceError(iteration, loss)
            opt.step(params, grads, lr)
            running.append(loss)
            samples += len(batch)
            since_val += len(batch)
            if since_val < every:
                continue
            since_val = 0
            val_loss, val_acc = evaluate()
            if not math.isfinite(val_loss):
                raise DivergenceError(iteration, val_loss)
            trace.points.append(
                ValidationPoint(iteration, samples, epoch, lr, float(np.mean(running)), val_loss, val_acc)
            )
            running = []
            if val_loss < best_loss:
                best_loss = val_loss
                best_params = [p.copy() for p in params]
                trace.best_index = len(trace.points) - 1
                stale = 0
                continue
            stale += 1
            if stale < schedule.patience:
                continue
            if drops < schedule.max_lr_drops and schedule.lr_drop_factor < 1.0:
                drops += 1
                lr *= schedule.lr_drop_factor
                stale = 0
                log.debug("plateau at iteration %d, learning rate now %g", iteration, lr)
                continue
            trace.stop_reason = "patience"
            return best_params, trace
        lr *= schedule.epoch_lr_decay
    trace.stop_reason = "max_epochs"
    if trace.best_index < 0:
        # fewer samples than one validation interval; validate once at the end
        val_loss, val_acc = evaluate()
        trace.points.append(
            ValidationPoint(iteration, samples, schedule.max_epochs - 1, lr, float(np.mean(running or [val_loss])), val_loss, val_acc)
        )
        trace.best_index = 0
        best_params = [p.copy() for p in params]
    return best_params, trace


def _labels(dataset, ids) -> np.ndarray:
    return np.array([dataset.mos(i) for i in ids], dtype=np.float64)


def _partition_ids(plan: SplitPlan, features: FeatureSet):
    train_ids = [i for i in features.ids if plan.assignment.get(i) == TRAIN]
    val_ids = [i for i in features.ids if plan.assignment.get(i) == VALIDATION]
    if not train_ids or not val_ids:
        raise ConfigError("training needs non-empty train and validation partitions")
    return train_ids, val_ids


def _train_mlp(model, x_train, y_train, x_val, y_val, schedule, rng, with_accuracy):
    params = model.params()

    def batch_loss_grad(idx):
        return mlp.loss_and_grad(model, x_train[idx], y_train[idx], rng)

    def evaluate():
        out, _ = mlp.forward(model, x_val)
        loss, _ = mlp.head_loss(model.head, out, y_val)
        acc = float(np.mean(out.argmax(axis=1) == y_val)) if with_accuracy else None
        return loss, acc

    best, trace = fit(params, model.param_lr_scales(), len(x_train), batch_loss_grad, evaluate, schedule, rng)
    for p, b in zip(params, best):
        p[...] = b
    return model, trace


def train_classifier(
    features: FeatureSet,
    dataset,
    plan: SplitPlan,
    arch: Sequence[int] = (32, 16),
    schedule: TrainSchedule = TrainSchedule(),
    dropout: float = 0.0,
) -> tuple[mlp.MlpModel, TrainingTrace]:
    """Fit a softmax-5 MLP on the binned MOS of the plan's train items,
    selecting the checkpoint with the lowest validation loss."""
    train_ids, val_ids = _partition_ids(plan, features)
    rng = np.random.default_rng(schedule.seed)
    model = mlp.init_mlp((features.dim, *arch, 5), mlp.SOFTMAX_5, rng, dropout)
    y_train = np.array([int(bin_mos(m)) for m in _labels(dataset, train_ids)])
    y_val = np.array([int(bin_mos(m)) for m in _labels(dataset, val_ids)])
    return _train_mlp(
        model, features.stack(train_ids), y_train, features.stack(val_ids), y_val, schedule, rng, True
    )


def train_regressor_e2e(
    features: FeatureSet,
    dataset,
    plan: SplitPlan,
    schedule: TrainSchedule = TrainSchedule(epoch_lr_decay=0.75, max_epochs=10),
    hidden: Sequence[int] = (64, 32, 8),
    dropout: float = 0.25,
    body: mlp.MlpModel | None = None,
) -> tuple[mlp.MlpModel, TrainingTrace]:
    """Fit a regression MLP on item MOS.

    When ``body`` is given its hidden layers are reused as the first layers
    and trained at the base rate, while the new head layers train at
    ``head_lr_multiplier`` times that rate.
    """
    train_ids, val_ids = _partition_ids(plan, features)
    rng = np.random.default_rng(schedule.seed)
    head_scale = schedule.head_lr_multiplier
    if body is None:
        model = mlp.init_mlp(
            (features.dim, *hidden, 1), mlp.REGRESSION_1, rng, dropout, [head_scale] * (len(hidden) + 1)
        )
    else:
        if body.sizes[0] != features.dim:
            raise ValueError("body input width does not match the features")
        n_body = body.n_layers - 1
        head = mlp.init_mlp((body.sizes[-2], *hidden, 1), mlp.REGRESSION_1, rng, dropout)
        model = mlp.MlpModel(
            body.sizes[:-1] + head.sizes[1:],
            [w.copy() for w in body.weights[:n_body]] + head.weights,
            [b.copy() for b in body.biases[:n_body]] + head.biases,
            mlp.REGRESSION_1,
            tuple([0.0] * n_body) + head.dropout,
            tuple([1.0] * n_body + [head_scale] * head.n_layers),
        )
    return _train_mlp(
        model,
        features.stack(train_ids),
        _labels(dataset, train_ids),
        features.stack(val_ids),
        _labels(dataset, val_ids),
        schedule,
        rng,
        False,
    )


def extract_activations(model: mlp.MlpModel, features: FeatureSet, mode: str = "last-layer") -> FeatureSet:
    """Hidden activations as new features: the last hidden layer, or every
    hidden layer concatenated."""
    if features.dim != model.sizes[0]:
        raise ValueError(f"model expects width {model.sizes[0]}, features have {features.dim}")
    if model.n_layers < 2:
        raise ValueError("model has no hidden layer to extract")
    hidden = mlp.hidden_activations(model, features.data)
    if mode == "last-layer":
        data = hidden[-1]
    elif mode == "all-layers":
        data = np.concatenate(hidden, axis=1)
    else:
        raise ValueError(f"unknown extraction mode {mode!r}")
    return FeatureSet(features.ids, data, mode)
