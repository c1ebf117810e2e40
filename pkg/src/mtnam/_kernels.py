"""Compiled single-window inference kernels.

Training and batch evaluation use vectorized numpy; these kernels serve the
per-window streaming path, where interpreter overhead would otherwise swamp
the arithmetic being compared.
"""

import math

import numpy as np
from numba import njit

LOGIT_CLAMP = 500.0


@njit(cache=True)
def sigmoid(t):
    if t > LOGIT_CLAMP:
        t = LOGIT_CLAMP
    elif t < -LOGIT_CLAMP:
        t = -LOGIT_CLAMP
    return 1.0 / (1.0 + math.exp(-t))


@njit(cache=True)
def nam_relu_contrib(x, W, B, V, C):
    M, h = W.shape
    out = np.empty(M)
    total = 0.0
    for j in range(M):
        z = x[j]
        s = C[j]
        for u in range(h):
            s += V[j, u] * max(W[j, u] * z + B[j, u], 0.0)
        out[j] = s
        total += s
    return out, sigmoid(total)


@njit(cache=True)
def nam_exu_contrib(x, W, B, V, C):
    M, h = W.shape
    out = np.empty(M)
    total = 0.0
    for j in range(M):
        z = x[j]
        s = C[j]
        for u in range(h):
            s += V[j, u] * min(max(math.exp(W[j, u]) * (z - B[j, u]), 0.0), 1.0)
        out[j] = s
        total += s
    return out, sigmoid(total)


@njit(cache=True)
def tree_contrib(x, thresholds, leaves):
    """Complete-binary-tree lookup, one tree per feature.

    ``thresholds`` is ``(M, 2**d - 1)`` in breadth-first order and
    ``leaves`` is ``(M, 2**d)``; nodes that stopped early carry ``+inf``
    so every query takes the left path below them. Returns
    ``(contrib, sigmoid(sum(contrib)))``, as do the NAM kernels.
    """
    M, n_int = thresholds.shape
    out = np.empty(M)
    total = 0.0
    for j in range(M):
        z = x[j]
        i = 0
        while i < n_int:
            i = 2 * i + 1 + (z > thresholds[j, i])
        out[j] = leaves[j, i - n_int]
        total += out[j]
    return out, sigmoid(total)


@njit(cache=True)
def binary_entropy(p):
    h = 0.0
    if p > 0.0:
        h -= p * math.log(p)
    if p < 1.0:
        h -= (1.0 - p) * math.log(1.0 - p)
    return h


@njit(cache=True)
def adapt_step(contrib, mu0, mu1, counts, h0):
    """One adapter step, updating ``mu0``/``mu1``/``counts`` in place.

    Returns ``(y_offline, y_adjusted, accepted, cls)``.
    """
    M = contrib.shape[0]
    logit = 0.0
    sq = 0.0
    for j in range(M):
        logit += contrib[j]
        sq += contrib[j] * contrib[j]
    y = sigmoid(logit)
    cls = 1 if y >= 0.5 else 0
    accepted = False
    if binary_entropy(y) < h0 and sq > 0.0:
        accepted = True
        norm = math.sqrt(sq)
        n = counts[cls] + 1
        counts[cls] = n
        keep = 1.0 - 1.0 / n
        step = 1.0 / n
        mu = mu1 if cls == 1 else mu0
        for j in range(M):
            mu[j] = keep * mu[j] + step * (contrib[j] / norm)
    adj = 0.0
    for j in range(M):
        adj += contrib[j] * (mu1[j] - mu0[j])
    return y, sigmoid(adj), accepted, cls
