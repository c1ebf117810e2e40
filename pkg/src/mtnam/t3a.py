"""Back-propagation-free test-time template adjustment for binary NAMs.

The adapter keeps one centroid per class of L2-normalized contribution
vectors, updated as a running mean for confident (low-entropy) windows.
The adjusted prediction is ``sigmoid(contrib . (mu1 - mu0))``. Model
parameters are never touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from mtnam import _kernels
from mtnam.evaluation import f1_weighted
from mtnam.features import FeatureMatrix

LN2 = math.log(2.0)


def default_h0_grid(n: int = 20) -> np.ndarray:
    return np.geomspace(1e-4, LN2, n)


def entropy(y_hat: float) -> float:
    """Binary entropy in nats with ``0 log 0 = 0``."""
    y = float(y_hat)
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"entropy is defined on [0, 1], got {y}")
    return _kernels.binary_entropy(y)


@dataclass
class AdapterState:
    mu0: np.ndarray
    mu1: np.ndarray
    counts: np.ndarray  # [n0, n1]
    h0: float

    @property
    def n0(self) -> int:
        return int(self.counts[0])

    @property
    def n1(self) -> int:
        return int(self.counts[1])

    @property
    def M(self) -> int:
        return self.mu0.size

    def copy(self) -> "AdapterState":
        return AdapterState(self.mu0.copy(), self.mu1.copy(), self.counts.copy(), self.h0)


def init_adapter(M: int, h0: float) -> AdapterState:
    """Class-1 centroid on +1/sqrt(M) * ones, class-0 on its negation, counts 1.

    With this orientation the untouched adapter predicts
    ``sigmoid(2 * sum(contrib) / sqrt(M))``, a positive rescaling of the
    offline logit.
    """
    if M < 1:
        raise ValueError("adapter dimension must be >= 1")
    if not h0 >= 0:
        raise ValueError("entropy threshold must be >= 0")
    mu1 = np.full(M, 1.0 / math.sqrt(M))
    return AdapterState(-mu1, mu1.copy(), np.ones(2, dtype=np.int64), float(h0))


@dataclass(frozen=True)
class StepResult:
    y_offline: float
    y_adjusted: float
    accepted: bool
    cls: int


def step(state: AdapterState, contrib) -> StepResult:
    """Advance ``state`` in place by one window."""
    contrib = np.ascontiguousarray(contrib, dtype=np.float64)
    if contrib.shape != (state.M,):
        raise ValueError(f"contribution vector must have length {state.M}")
    y, adj, accepted, cls = _kernels.adapt_step(contrib, state.mu0, state.mu1, state.counts, state.h0)
    return StepResult(y, adj, accepted, cls)


def adapt_step(state: AdapterState, contrib) -> tuple[float, AdapterState]:
    """Functional form: returns the adjusted prediction and a new state."""
    new = state.copy()
    return step(new, contrib).y_adjusted, new


ForwardFn = Callable[[np.ndarray], tuple[np.ndarray, float]]


def forward_fn_for(model) -> ForwardFn:
    """Single-window forward for a NAM or MT-NAM."""
    from mtnam.mtnam import MtNamModel, mtnam_forward
    from mtnam.nam import NamModel, nam_forward

    if isinstance(model, MtNamModel):
        return lambda x: mtnam_forward(model, x)
    if isinstance(model, NamModel):
        return lambda x: nam_forward(model, x)
    raise TypeError(f"no additive forward for {type(model).__name__}")


@dataclass
class StreamResult:
    window_start_s: np.ndarray
    labels: np.ndarray
    y_offline: np.ndarray
    y_adapted: np.ndarray
    accepted: np.ndarray
    cls: np.ndarray

    def __len__(self) -> int:
        return self.y_offline.size

    def write_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("window_start_s,label,y_offline,y_adapted,accepted,class_assigned\n")
            for row in zip(self.window_start_s, self.labels, self.y_offline, self.y_adapted,
                           self.accepted, self.cls):
                t, y, yo, ya, acc, c = row
                fh.write(f"{t:.17g},{int(y)},{yo:.17g},{ya:.17g},{int(acc)},{int(c)}\n")


def run_stream(forward_fn: ForwardFn, adapter: AdapterState, features: FeatureMatrix) -> StreamResult:
    """Process windows once, in time order, recording offline and adapted outputs.

    ``features`` rows must already be in the model's input space.
    """
    if len(features) > 1 and np.any(np.diff(features.window_start_s) < 0):
        raise ValueError("stream windows must be in chronological order")
    n = len(features)
    y_off, y_adj = np.empty(n), np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    cls = np.zeros(n, dtype=np.int64)
    for i, x in enumerate(features.rows):
        contrib, _ = forward_fn(x)
        r = step(adapter, contrib)
        y_off[i], y_adj[i], accepted[i], cls[i] = r.y_offline, r.y_adjusted, r.accepted, r.cls
    return StreamResult(features.window_start_s.copy(), features.labels.copy(), y_off, y_adj, accepted, cls)


@dataclass
class H0Row:
    h0: float
    f1: float
    n_accepted: int


def tune_h0(model_or_fn, val: FeatureMatrix, grid: Sequence[float] | None = None) -> tuple[float, list[H0Row]]:
    """Pick the entropy threshold with the best adapted validation F1.

    Each candidate runs on a fresh adapter; ties prefer the larger threshold.
    """
    grid = default_h0_grid() if grid is None else list(grid)
    if len(grid) == 0:
        raise ValueError("empty H0 grid")
    fn = model_or_fn if callable(model_or_fn) else forward_fn_for(model_or_fn)
    rows = []
    for h0 in grid:
        res = run_stream(fn, init_adapter(val.M, h0), val)
        rows.append(H0Row(float(h0), f1_weighted(res.y_adapted, val.labels), int(res.accepted.sum())))
    best = max(rows, key=lambda r: (r.f1, r.h0))
    return best.h0, rows
