"""Epsilon-insensitive support vector regression trained by SMO.

The dual is solved in its 2n-variable form: for each sample k there is an
``a[k]`` (label +1) and an ``a[k + n]`` (label -1), both boxed in [0, C], with

    minimize  1/2 a^T Q a + p^T a   subject to  sum(label * a) = 0,

where ``Q[s, t] = label[s] * label[t] * K(x[s % n], x[t % n])`` and
``p = (eps - y, eps + y)``. The regression coefficient of sample k is
``a[k] - a[k + n]``. Working pairs are the maximal KKT violators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from leakbench.errors import ConfigError

POOLING = ("mean", "median", "min", "max")

_TAU = 1e-12
_FULL_GRAM_LIMIT = 3000


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    gamma: float | None = None
    degree: int = 3
    coef0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "polynomial", "gaussian"):
            raise ConfigError(f"unknown kernel {self.kind!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.degree < 1:
            raise ConfigError("degree must be at least 1")

    def resolved(self, dim: int) -> "KernelSpec":
        if self.kind == "gaussian" and self.gamma is None:
            return KernelSpec(self.kind, 1.0 / dim, self.degree, self.coef0)
        return self

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``a`` and ``b``."""
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if self.kind == "linear":
            return a @ b.T
        if self.kind == "polynomial":
            gamma = 1.0 if self.gamma is None else self.gamma
            return (gamma * (a @ b.T) + self.coef0) ** self.degree
        gamma = self.gamma if self.gamma is not None else 1.0 / a.shape[1]
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
        return np.exp(-gamma * np.maximum(sq, 0.0))

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "gaussian":
            out["gamma"] = self.gamma
        if self.kind == "polynomial":
            out.update(degree=self.degree, coef0=self.coef0, gamma=self.gamma)
        return out

    @classmethod
    def from_json(cls, raw) -> "KernelSpec":
        if isinstance(raw, str):
            return cls(raw)
        return cls(**raw)


@dataclass(frozen=True)
class SvrConfig:
    c: float = 1.0
    epsilon: float = 0.1
    kkt_tolerance: float = 1e-3
    max_passes: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("c must be positive")
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be non-negative")
        if not self.kkt_tolerance > 0:
            raise ConfigError("kkt_tolerance must be positive")
        if self.max_passes < 1:
            raise ConfigError("max_passes must be positive")


@dataclass
class SvrModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    kernel: KernelSpec
    c: float
    epsilon: float
    kkt_residual: float = 0.0
    converged: bool = True
    n_iter: int = 0
    dual_objective: float = 0.0
    support_ids: tuple = field(default=())

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]


def pool_features(vectors, method: str = "mean") -> np.ndarray:
    """Elementwise aggregate of a group's item vectors."""
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("cannot pool an empty group")
    if method == "mean":
        return v.mean(axis=0)
    if method == "median":
        return np.median(v, axis=0)
    if method == "min":
        return v.min(axis=0)
    if method == "max":
        return v.max(axis=0)
    raise ValueError(f"unknown pooling {method!r}")


class _KernelColumns:
    def __init__(self, x, kernel):
        self.x = x
        self.kernel = kernel
        n = len(x)
        self.full = kernel(x, x) if n <= _FULL_GRAM_LIMIT else None
        self.cache: dict[int, np.ndarray] = {}
        self.max_cached = max(16, int(2e8 // (8 * max(n, 1))))
        if self.full is None:
            self.diag = np.array([kernel(x[k : k + 1], x[k : k + 1])[0, 0] for k in range(n)])
        else:
            self.diag = np.diag(self.full).copy()

    def column(self, k: int) -> np.ndarray:
        if self.full is not None:
            return self.full[:, k]
        col = self.cache.get(k)
        if col is None:
            if len(self.cache) >= self.max_cached:
                self.cache.pop(next(iter(self.cache)))
            col = self.kernel(self.x, self.x[k : k + 1])[:, 0]
            self.cache[k] = col
        return col


def _select(values, mask, priority, largest):
    """Index of the extreme of ``values`` over ``mask``; ties go to the
    lowest priority number."""
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        return -1, (-math.inf if largest else math.inf)
    v = values[cand]
    best = v.max() if largest else v.min()
    tied = cand[v == best]
    return int(tied[np.argmin(priority[tied])]), float(best)


def train_svr(
    x,
    y,
    kernel: KernelSpec = KernelSpec(),
    config: SvrConfig = SvrConfig(),
    ids: Sequence | None = None,
    on_update: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> SvrModel:
    """Solve the epsilon-SVR dual by SMO.

    ``ids`` (any sortable keys) pin the seeded tie-break order to the samples
    themselves, so reordering the training data yields the same model.
    ``on_update(iteration, alpha, alpha_star)`` is called after every pair
    update with read-only views of the dual variables, indexed in id order.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[0] != y.size:
        raise ValueError("need a non-empty (n, d) sample matrix and n targets")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    n = y.size
    kernel = kernel.resolved(x.shape[1])
    c, eps = float(config.c), float(config.epsilon)

    if ids is None:
        ids = list(range(n))
    ids = list(ids)
    if len(set(ids)) != n:
        raise ValueError("ids must be unique")
    # solve in id order so the floating-point path ignores input order
    order = sorted(range(n), key=lambda k: ids[k])
    x, y, ids = x[order], y[order], [ids[k] for k in order]
    priority = np.random.default_rng(config.seed).permutation(2 * n)

    sign = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([eps - y, eps + y])
    a = np.zeros(2 * n)
    grad = p.copy()
    cols = _KernelColumns(x, kernel)
    qd = np.concatenate([cols.diag, cols.diag])

    max_iter = int(config.max_passes) * 2 * n
    n_iter = 0
    gap = math.inf
    while True:
        neg_yg = -sign * grad
        up = ((sign > 0) & (a < c)) | ((sign < 0) & (a > 0))
        low = ((sign > 0) & (a > 0)) | ((sign < 0) & (a < c))
        i, m_up = _select(neg_yg, up, priority, largest=True)
        j, m_low = _select(neg_yg, low, priority, largest=False)
        gap = m_up - m_low if i >= 0 and j >= 0 else 0.0
        if gap <= config.kkt_tolerance or n_iter >= max_iter:
            break
        n_iter += 1

        ki = cols.column(i % n)
        kj = cols.column(j % n)
        q_i = sign[i] * np.concatenate([ki, ki]) * sign
        q_j = sign[j] * np.concatenate([kj, kj]) * sign
        old_i, old_j = a[i], a[j]
        if sign[i] != sign[j]:
            quad = qd[i] + qd[j] + 2.0 * q_i[j]
            delta = (-grad[i] - grad[j]) / (quad if quad > 0 else _TAU)
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0:  # both bounds equal c
                if a[i] > c:
                    a[i] = c
                    a[j] = c - diff
            elif a[j] > c:
                a[j] = c
                a[i] = c + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * q_i[j]
            delta = (grad[i] - grad[j]) / (quad if quad > 0 else _TAU)
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > c:
                if a[i] > c:
                    a[i] = c
                    a[j] = total - c
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > c:
                if a[j] > c:
                    a[j] = c
                    a[i] = total - c
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total
        np.clip(a, 0.0, c, out=a)
        d_i, d_j = a[i] - old_i, a[j] - old_j
        if d_i:
            grad += q_i * d_i
        if d_j:
            grad += q_j * d_j
        if on_update is not None:
            view = a.view()
            view.flags.writeable = False
            on_update(n_iter, view[:n], view[n:])

    converged = gap <= config.kkt_tolerance
    if not converged:
        warnings.warn(
            f"SMO stopped after {n_iter} iterations with KKT residual {gap:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    rho = _rho(a, grad, sign, c)
    objective = 0.5 * math.fsum(a * (grad + p))
    coef = a[:n] - a[n:]
    keep = np.flatnonzero(coef != 0.0)
    return SvrModel(
        support_vectors=x[keep].copy(),
        dual_coef=coef[keep].copy(),
        bias=-rho,
        kernel=kernel,
        c=c,
        epsilon=eps,
        kkt_residual=float(gap),
        converged=converged,
        n_iter=n_iter,
        dual_objective=float(objective),
        support_ids=tuple(ids[k] for k in keep),
    )


def _rho(a, grad, sign, c):
    yg = sign * grad
    at_upper = a >= c
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if np.any(free):
        return math.fsum(yg[free]) / int(free.sum())
    ub, lb = math.inf, -math.inf
    ub_mask = (at_upper & (sign < 0)) | (at_lower & (sign > 0))
    lb_mask = (at_upper & (sign > 0)) | (at_lower & (sign < 0))
    if np.any(ub_mask):
        ub = float(yg[ub_mask].min())
    if np.any(lb_mask):
        lb = float(yg[lb_mask].max())
    return (ub + lb) / 2.0


def predict_svr(model: SvrModel, x) -> np.ndarray:
    """Decision values ``sum_k coef_k K(sv_k, x) + bias`` for each row of x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(model.dual_coef) == 0:
        return np.full(x.shape[0], model.bias)
    if x.shape[1] != model.dim:
        raise ValueError(f"expected width {model.dim}, got {x.shape[1]}")
    return model.kernel(x, model.support_vectors) @ model.dual_coef + model.bias


def dual_objective(coef, x, y, kernel: KernelSpec, epsilon: float) -> float:
    """Dual objective in coefficient form (minimization sign convention)."""
    coef = np.asarray(coef, dtype=np.float64)
    k = kernel.resolved(np.asarray(x).shape[1])(x, x)
    return float(0.5 * coef @ k @ coef - np.asarray(y) @ coef + epsilon * np.abs(coef).sum())


def primal_objective(model: SvrModel, x, y) -> float:
    """1/2 ||w||^2 + C * sum of epsilon-insensitive losses."""
    sv = model.support_vectors
    w_sq = float(model.dual_coef @ model.kernel(sv, sv) @ model.dual_coef) if len(sv) else 0.0
    resid = np.abs(predict_svr(model, x) - np.asarray(y, dtype=np.float64))
    return 0.5 * w_sq + model.c * float(np.maximum(resid - model.epsilon, 0.0).sum())
