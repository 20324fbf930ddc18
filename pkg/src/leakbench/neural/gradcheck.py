"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

import numpy as np

from leakbench.neural import lstm, mlp

KINDS = ("mlp-softmax", "mlp-regression", "lstm")


def _max_relative_error(params, analytic, loss_fn, h):
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.reshape(-1)
        g_flat = g.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + h
            up = loss_fn()
            flat[k] = saved - h
            down = loss_fn()
            flat[k] = saved
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(numeric), abs(g_flat[k]), 1e-7)
            worst = max(worst, abs(numeric - g_flat[k]) / denom)
    return worst


def gradient_check(
    kind: str,
    rng: np.random.Generator,
    h: float = 1e-5,
    sizes=(8, 16, 5),
    batch: int = 7,
    hidden: int = 8,
    seq_len: int = 6,
) -> float:
    """Max relative error between analytic and finite-difference gradients
    over every parameter of a random model instance."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("perturbation must lie in [1e-7, 1e-3]")
    if kind in ("mlp-softmax", "mlp-regression"):
        head = mlp.SOFTMAX_5 if kind == "mlp-softmax" else mlp.REGRESSION_1
        sizes = tuple(sizes[:-1]) + ((5,) if head == mlp.SOFTMAX_5 else (1,))
        model = mlp.init_mlp(sizes, head, rng)
        for b in model.biases:
            b[...] = rng.normal(0.0, 0.1, size=b.shape)
        x = rng.standard_normal((batch, sizes[0]))
        y = rng.integers(0, 5, size=batch) if head == mlp.SOFTMAX_5 else rng.normal(3.0, 1.0, size=batch)
        _, analytic = mlp.loss_and_grad(model, x, y)
        return _max_relative_error(model.params(), analytic, lambda: mlp.loss_and_grad(model, x, y)[0], h)
    if kind == "lstm":
        input_dim = sizes[0]
        model = lstm.init_lstm(input_dim, hidden, rng)
        model.bias[...] += rng.normal(0.0, 0.1, size=model.bias.shape)
        lengths = rng.integers(1, seq_len + 1, size=batch)
        lengths[0] = seq_len
        seqs = [rng.standard_normal((n, input_dim)) for n in lengths]
        x, lengths = lstm.pad_batch(seqs)
        y = rng.normal(3.0, 1.0, size=batch)
        _, analytic = lstm.loss_and_grad(model, x, lengths, y)
        return _max_relative_error(
            model.params(), analytic, lambda: lstm.loss_and_grad(model, x, lengths, y)[0], h
        )
    raise ValueError(f"unknown model kind {kind!r}")
