"""Single-layer LSTM sequence regressor trained by backpropagation through time.

Sequences in a batch are zero-padded at the end. Padded steps neither update
the state nor contribute to the loss, so the output of a padded sequence is
the output of the unpadded one.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from leakbench.errors import ConfigError
from leakbench.neural.training import TrainingTrace, TrainSchedule, fit
from leakbench.splits import TRAIN, VALIDATION

SORTED_NONRANDOM = "sorted-nonrandom"
SHUFFLED = "shuffled"


@dataclass
class LstmModel:
    """Gate blocks are stacked in the order input, forget, output, cell."""

    w_input: np.ndarray  # (input_dim, 4 * hidden)
    w_recurrent: np.ndarray  # (hidden, 4 * hidden)
    bias: np.ndarray  # (4 * hidden,)
    w_head: np.ndarray  # (hidden,)
    b_head: np.ndarray  # (1,)
    forget_bias_init: float = 1.0

    def __post_init__(self):
        d, four_h = self.w_input.shape
        h = four_h // 4
        if four_h != 4 * h or h < 1:
            raise ValueError("input weights need 4 * hidden columns")
        if self.w_recurrent.shape != (h, 4 * h) or self.bias.shape != (4 * h,):
            raise ValueError("recurrent weights or bias have inconsistent dimensions")
        if self.w_head.shape != (h,) or self.b_head.shape != (1,):
            raise ValueError("head weights have inconsistent dimensions")

    @property
    def input_dim(self) -> int:
        return self.w_input.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_recurrent.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.w_input, self.w_recurrent, self.bias, self.w_head, self.b_head]

    def copy(self) -> "LstmModel":
        return replace(self, **{k: getattr(self, k).copy() for k in ("w_input", "w_recurrent", "bias", "w_head", "b_head")})


def init_lstm(input_dim: int, hidden_dim: int, rng: np.random.Generator, forget_bias: float = 1.0) -> LstmModel:
    h = hidden_dim
    lim_in = np.sqrt(6.0 / (input_dim + h))
    lim_rec = np.sqrt(6.0 / (2 * h))
    lim_head = np.sqrt(6.0 / (h + 1))
    bias = np.zeros(4 * h)
    bias[h : 2 * h] = forget_bias
    return LstmModel(
        rng.uniform(-lim_in, lim_in, size=(input_dim, 4 * h)),
        rng.uniform(-lim_rec, lim_rec, size=(h, 4 * h)),
        bias,
        rng.uniform(-lim_head, lim_head, size=h),
        np.zeros(1),
        forget_bias,
    )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def pad_batch(sequences: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Zero-pad at the end to the longest sequence. Returns (B, T, d), lengths."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    if np.any(lengths < 1):
        raise ValueError("empty sequence")
    dim = np.asarray(sequences[0]).shape[1]
    x = np.zeros((len(sequences), int(lengths.max()), dim))
    for k, s in enumerate(sequences):
        x[k, : len(s)] = s
    return x, lengths


def forward(model: LstmModel, x: np.ndarray, lengths: np.ndarray):
    b, t_max, d = x.shape
    if d != model.input_dim:
        raise ValueError(f"expected input width {model.input_dim}, got {d}")
    h_dim = model.hidden_dim
    mask = (np.arange(t_max)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
    h = np.zeros((b, h_dim))
    c = np.zeros((b, h_dim))
    steps = []
    for t in range(t_max):
        z = x[:, t] @ model.w_input + h @ model.w_recurrent + model.bias
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim : 2 * h_dim])
        o = _sigmoid(z[:, 2 * h_dim : 3 * h_dim])
        g = np.tanh(z[:, 3 * h_dim :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        m = mask[:, t : t + 1]
        steps.append((h, c, i, f, o, g, tanh_c, m))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    pred = h @ model.w_head + model.b_head[0]
    return pred, (x, h, steps)


def backward(model: LstmModel, cache, dpred: np.ndarray) -> list[np.ndarray]:
    x, h_last, steps = cache
    dw_in = np.zeros_like(model.w_input)
    dw_rec = np.zeros_like(model.w_recurrent)
    dbias = np.zeros_like(model.bias)
    dw_head = h_last.T @ dpred
    db_head = np.array([dpred.sum()])
    dh = dpred[:, None] * model.w_head[None, :]
    dc = np.zeros_like(dh)
    for t in range(len(steps) - 1, -1, -1):
        h_prev, c_prev, i, f, o, g, tanh_c, m = steps[t]
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1.0 - tanh_c * tanh_c)
        dz = np.concatenate(
            [
                dc_new * g * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dh_new * tanh_c * o * (1.0 - o),
                dc_new * i * (1.0 - g * g),
            ],
            axis=1,
        )
        dw_in += x[:, t].T @ dz
        dw_rec += h_prev.T @ dz
        dbias += dz.sum(axis=0)
        dh = dz @ model.w_recurrent.T + (1.0 - m) * dh
        dc = dc_new * f + (1.0 - m) * dc
    return [dw_in, dw_rec, dbias, dw_head, db_head]


def loss_and_grad(model: LstmModel, x, lengths, y):
    pred, cache = forward(model, x, lengths)
    diff = pred - np.asarray(y, dtype=np.float64)
    loss = float(np.mean(diff * diff))
    return loss, backward(model, cache, (2.0 / len(diff)) * diff)


def predict(model: LstmModel, sequences: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(sequences), batch_size):
        x, lengths = pad_batch(sequences[start : start + batch_size])
        out.append(forward(model, x, lengths)[0])
    return np.concatenate(out) if out else np.zeros(0)


def train_lstm(
    sequences: Mapping[str, np.ndarray],
    labels: Mapping[str, float],
    group_split: Mapping[str, str],
    hidden_dim: int = 16,
    schedule: TrainSchedule = TrainSchedule(batch_size=27),
    batching: str = SORTED_NONRANDOM,
) -> tuple[LstmModel, TrainingTrace]:
    """Fit on groups marked train, early-stop on groups marked validation.

    With ``sorted-nonrandom`` batching the training sequences are sorted by
    length (ties by group id) and cut into the same consecutive batches in
    every epoch.
    """
    if batching not in (SORTED_NONRANDOM, SHUFFLED):
        raise ConfigError(f"unknown batching {batching!r}")
    train = [g for g in sequences if group_split.get(g) == TRAIN]
    val = [g for g in sequences if group_split.get(g) == VALIDATION]
    if not train or not val:
        raise ConfigError("LSTM training needs train and validation groups")
    for g in train + val:
        if len(sequences[g]) < 1:
            raise ValueError(f"empty sequence for group {g!r}")
    train.sort(key=lambda g: (len(sequences[g]), g))
    train_seqs = [np.asarray(sequences[g], dtype=np.float64) for g in train]
    y_train = np.array([labels[g] for g in train], dtype=np.float64)
    val_x, val_len = pad_batch([np.asarray(sequences[g], dtype=np.float64) for g in val])
    y_val = np.array([labels[g] for g in val], dtype=np.float64)

    rng = np.random.default_rng(schedule.seed)
    model = init_lstm(train_seqs[0].shape[1], hidden_dim, rng)
    params = model.params()
    n = len(train)
    bs = schedule.batch_size
    fixed = [np.arange(s, min(s + bs, n)) for s in range(0, n, bs)]

    def epoch_batches(_epoch):
        if batching == SORTED_NONRANDOM:
            yield from fixed
        else:
            order = rng.permutation(n)
            for s in range(0, n, bs):
                yield order[s : s + bs]

    def batch_loss_grad(idx):
        x, lengths = pad_batch([train_seqs[k] for k in idx])
        return loss_and_grad(model, x, lengths, y_train[idx])

    def evaluate():
        pred, _ = forward(model, val_x, val_len)
        return float(np.mean((pred - y_val) ** 2)), None

    best, trace = fit(params, [1.0] * len(params), n, batch_loss_grad, evaluate, schedule, rng, epoch_batches)
    for p, b in zip(params, best):
        p[...] = b
    return model, trace
