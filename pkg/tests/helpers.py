"""Independent oracles shared by the unit and acceptance tests."""

from fractions import Fraction

import numpy as np


def finite_difference_check(model, X, y, rng, n_params=None, step=1e-5, floor=1e-7):
    """Largest relative error between analytic and central-difference gradients.

    Checks ``n_params`` randomly chosen scalar parameters (all if None).
    Returns ``(max_rel_err, n_checked)``.
    """
    _, grads = model.loss_and_grad(X, y)
    coords = [(k, idx) for k, arr in model.params.items() for idx in np.ndindex(arr.shape)]
    if n_params is not None and n_params < len(coords):
        pick = rng.choice(len(coords), size=n_params, replace=False)
        coords = [coords[i] for i in pick]
    worst = 0.0
    for k, idx in coords:
        arr = model.params[k]
        old = arr[idx]
        arr[idx] = old + step
        up, _ = model.loss_and_grad(X, y)
        arr[idx] = old - step
        down, _ = model.loss_and_grad(X, y)
        arr[idx] = old
        numeric = (up - down) / (2 * step)
        analytic = grads[k][idx]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst, len(coords)


def exhaustive_root_split(z, t):
    """Best single split by brute force in exact rational arithmetic.

    Candidates are midpoints of consecutive distinct sorted inputs; equal
    SSE resolves to the smaller threshold. Returns ``(threshold, sse)`` or
    None when no split exists.
    """
    zf = [Fraction(v) for v in z]
    tf = [Fraction(v) for v in t]
    distinct = sorted(set(zf))
    best = None
    for a, b in zip(distinct, distinct[1:]):
        thr = (a + b) / 2
        sse = Fraction(0)
        for side in (True, False):
            part = [ti for zi, ti in zip(zf, tf) if (zi <= thr) == side]
            mean = sum(part) / len(part)
            sse += sum((ti - mean) ** 2 for ti in part)
        if best is None or sse < best[1]:
            best = (thr, sse)
    return best


def pairwise_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))
