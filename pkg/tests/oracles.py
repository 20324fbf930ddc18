"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np


def mos_class_literal(m):
    """Class index from the five interval conditions written out literally."""
    hits = [
        1.0 <= m <= 1.8,
        1.8 < m <= 2.6,
        2.6 < m <= 3.4,
        3.4 < m <= 4.2,
        4.2 < m <= 5.0,
    ]
    assert sum(hits) <= 1
    return hits.index(True) if any(hits) else None


def pearson_double_loop(x, y) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = sxx = syy = 0.0
    for i in range(n):
        dx = x[i] - mx
        dy = y[i] - my
        sxy += dx * dy
        sxx += dx * dx
        syy += dy * dy
    return sxy / math.sqrt(sxx * syy)


def average_ranks_brute(x) -> list[float]:
    """Rank of each value = 1 + #smaller + (#equal - 1) / 2, by pairwise counting."""
    out = []
    for xi in x:
        smaller = sum(1 for xj in x if xj < xi)
        equal = sum(1 for xj in x if xj == xi)
        out.append(1.0 + smaller + (equal - 1) / 2.0)
    return out


def spearman_brute(x, y) -> float:
    return pearson_double_loop(average_ranks_brute(x), average_ranks_brute(y))


def _project(v, c, n):
    """Euclidean projection of v onto {z in [0, c]^2n : sum(z[:n]) == sum(z[n:])}."""
    a = np.concatenate([np.ones(n), -np.ones(n)])
    bps = np.unique(np.concatenate([v / a, (v - c) / a]))
    vals = np.clip(v[None, :] - bps[:, None] * a[None, :], 0.0, c) @ a
    # vals is non-increasing in lambda
    k = int(np.searchsorted(-vals, 0.0))
    if k == 0:
        lam = bps[0]
    elif k == len(bps):
        lam = bps[-1]
    else:
        l0, l1, g0, g1 = bps[k - 1], bps[k], vals[k - 1], vals[k]
        lam = l0 if g0 == g1 else l0 + (l1 - l0) * g0 / (g0 - g1)
    return np.clip(v - lam * a, 0.0, c)


def _primal_min_over_bias(kc, w_sq, y, c, eps):
    """min over b of 1/2 w_sq + C * sum(max(0, |y - kc - b| - eps)).

    The loss is convex and piecewise linear in b, so its minimum sits at one
    of the breakpoints y - kc +- eps.
    """
    r = y - kc
    cands = np.concatenate([r - eps, r + eps])
    loss = np.maximum(np.abs(r[None, :] - cands[:, None]) - eps, 0.0).sum(axis=1)
    return 0.5 * w_sq + c * float(loss.min())


def _polish(k, y, c, eps, coef, tol):
    """Guess the active set from an approximate solution and solve the
    resulting equality-constrained QP exactly."""
    at_upper = coef >= c - tol
    at_lower = coef <= -c + tol
    free = ~(at_upper | at_lower) & (np.abs(coef) > tol)
    fixed = np.where(at_upper, c, np.where(at_lower, -c, 0.0))
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return fixed if abs(fixed.sum()) < 1e-12 else None
    s = np.sign(coef[idx])
    m = idx.size
    lhs = np.zeros((m + 1, m + 1))
    lhs[:m, :m] = k[np.ix_(idx, idx)]
    lhs[:m, m] = 1.0
    lhs[m, :m] = 1.0
    rhs = np.concatenate([y[idx] - eps * s - k[idx] @ fixed, [-fixed.sum()]])
    sol = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    out = fixed.copy()
    out[idx] = sol[:m]
    if np.any(np.abs(out) > c + 1e-12) or np.any(out[idx] * s < -1e-12) or abs(out.sum()) > 1e-10:
        return None
    return out


def svr_dual_oracle(k, y, c, eps, iterations=4000, gap_tol=1e-9):
    """Bracket the optimum of the epsilon-SVR dual
    1/2 (a - a*)' K (a - a*) - y'(a - a*) + eps * sum(a + a*).

    Accelerated projected gradient on the 2n variables gives an approximate
    point; its active set is then solved exactly. The upper bound is the
    dual value of a feasible point and the lower bound is minus the primal
    objective of the weights it implies (weak duality), so the true optimum
    always lies in [lower, upper].
    """
    n = len(y)
    k = np.asarray(k, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    q = np.block([[k, -k], [-k, k]])
    p = np.concatenate([eps - y, eps + y])
    lip = max(np.linalg.eigvalsh(q).max(), 1e-12)
    dual = lambda coef: 0.5 * coef @ k @ coef - y @ coef + eps * np.abs(coef).sum()
    lower_of = lambda coef: -_primal_min_over_bias(k @ coef, coef @ k @ coef, y, c, eps)
    f = lambda v: 0.5 * v @ q @ v + p @ v
    z = np.zeros(2 * n)
    w = z.copy()
    t = 1.0
    fz = f(z)
    best_up, best_low = 0.0, lower_of(np.zeros(n))
    for it in range(iterations):
        if it % 200 == 199:
            coef = z[:n] - z[n:]
            best_up = min(best_up, dual(coef))
            best_low = max(best_low, lower_of(coef))
            for tol in (1e-3, 1e-5, 1e-7, 1e-9):
                exact = _polish(k, y, c, eps, coef, tol)
                if exact is not None:
                    best_up = min(best_up, dual(exact))
                    best_low = max(best_low, lower_of(exact))
            if best_up - best_low < gap_tol:
                break
        z_new = _project(w - (q @ w + p) / lip, c, n)
        f_new = f(z_new)
        if f_new > fz:
            # adaptive restart keeps the iteration monotone
            w, t = z.copy(), 1.0
            continue
        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        w = z_new + ((t - 1.0) / t_new) * (z_new - z)
        z, t, fz = z_new, t_new, f_new
    return best_up, best_low
