"""Chronological splitting and detection metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from mtnam.errors import FormatError
from mtnam.features import FeatureMatrix

Interval = tuple[float, float]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.15
    val: float = 0.15
    test: float = 0.70

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise FormatError("split fractions must be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise FormatError("split fractions must sum to 1")


def _event_windows(starts: np.ndarray, win_s: float, events: Sequence[Interval]) -> list[tuple[int, int]]:
    """Inclusive ``(first, last)`` row indices of the windows overlapping each event."""
    out = []
    for s, e in events:
        idx = np.flatnonzero((starts < e) & (starts + win_s > s))
        if idx.size:
            out.append((int(idx[0]), int(idx[-1])))
    return out


def chronological_split(fm: FeatureMatrix, events: Sequence[Interval], spec: SplitSpec = SplitSpec()):
    """Split into contiguous ``(train, val, test)`` blocks in time order.

    The nominal cut points are moved forward just far enough that train and
    val each contain at least one complete event. When the nominal train cut
    would swallow every event, the train cut falls back to the end of the
    first event so the next one can land in val.
    """
    if np.any(np.diff(fm.window_start_s) <= 0):
        raise FormatError("feature windows must be strictly increasing in time")
    spans = _event_windows(fm.window_start_s, fm.win_s, sorted(events))
    if len(spans) < 2:
        raise FormatError(
            f"chronological split needs at least 2 seizure events (found {len(spans)}): "
            "one must fall in training and one in validation"
        )
    n = len(fm)
    nominal1 = int(round(spec.train * n))
    nominal2 = int(round((spec.train + spec.val) * n))

    def complete_after(cut):
        return [sp for sp in spans if sp[0] >= cut]

    cut1 = max(nominal1, spans[0][1] + 1)
    if not complete_after(cut1):
        cut1 = spans[0][1] + 1
        if not complete_after(cut1):
            raise FormatError("events overlap in window space; cannot place one in train and one in val")
    first_val = complete_after(cut1)[0]
    cut2 = max(nominal2, first_val[1] + 1)
    if cut2 >= n:
        raise FormatError("recording too short: no test windows remain after the validation event")
    idx = np.arange(n)
    return fm.subset(idx < cut1), fm.subset((idx >= cut1) & (idx < cut2)), fm.subset(idx >= cut2)


def events_in(fm: FeatureMatrix, events: Sequence[Interval]) -> list[Interval]:
    """Events overlapping any window of ``fm``."""
    if len(fm) == 0:
        return []
    lo = fm.window_start_s[0]
    hi = fm.window_start_s[-1] + fm.win_s
    return [(s, e) for s, e in events if s < hi and e > lo]


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def no_positives(self) -> bool:
        return self.tp + self.fn == 0

    @property
    def no_negatives(self) -> bool:
        return self.tn + self.fp == 0


def _check_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape} scores vs {labels.shape} labels")
    if labels.size and not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    return scores, labels.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> tuple[float, float, Counts]:
    """Window sensitivity and specificity at ``score >= threshold``.

    A rate whose class is absent is reported as 1.0; ``Counts`` flags it.
    """
    scores, labels = _check_pair(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    fp = int(np.sum(pred & (labels == 0)))
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return sens, spec, Counts(tp, fp, tn, fn)


def event_sensitivity(preds, window_times, events: Sequence[Interval], win_s: float = 1.0) -> float:
    """Fraction of events with at least one positive overlapping window; NaN without events."""
    preds = np.asarray(preds).astype(bool)
    times = np.asarray(window_times, dtype=np.float64)
    if preds.shape != times.shape:
        raise ValueError("preds and window_times differ in length")
    if not events:
        return math.nan
    detected = 0
    for s, e in events:
        overlap = (times < e) & (times + win_s > s)
        detected += bool(np.any(preds & overlap))
    return detected / len(events)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with ties counted one half."""
    scores, labels = _check_pair(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1_weighted(scores, labels, threshold: float = 0.5) -> float:
    """Support-weighted mean of the two per-class F1 scores."""
    scores, labels = _check_pair(scores, labels)
    if labels.size == 0:
        raise ValueError("F1 of an empty set")
    pred = (scores >= threshold).astype(np.int64)
    total = 0.0
    for cls in (0, 1):
        tp = np.sum((pred == cls) & (labels == cls))
        fp = np.sum((pred == cls) & (labels != cls))
        fn = np.sum((pred != cls) & (labels == cls))
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        total += f1 * np.sum(labels == cls)
    return float(total / labels.size)


@dataclass
class MetricsReport:
    sensitivity: float
    specificity: float
    f1_weighted: float
    auroc: float
    event_sensitivity: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_events: int
    n_events_detected: int
    model: str = ""
    extra: dict = field(default_factory=dict)

    FIELDS = ("model", "sensitivity", "specificity", "f1_weighted", "auroc", "event_sensitivity",
              "tp", "fp", "tn", "fn", "n_events", "n_events_detected")

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return {k: d[k] for k in self.FIELDS}

    def to_kv(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in self.as_dict().items()]
        lines += [f"{k}={_fmt(v)}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.FIELDS)

    def csv_row(self) -> str:
        return ",".join(_fmt(v) for v in self.as_dict().values())


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def evaluate(scores, labels, window_times, events: Sequence[Interval], threshold: float = 0.5,
             win_s: float = 1.0, model: str = "") -> MetricsReport:
    scores, labels = _check_pair(scores, labels)
    sens, spec, c = confusion(scores, labels, threshold)
    both = 0 < labels.sum() < labels.size
    ev = event_sensitivity(scores >= threshold, window_times, events, win_s)
    n_det = 0 if math.isnan(ev) else int(round(ev * len(events)))
    return MetricsReport(
        sensitivity=sens,
        specificity=spec,
        f1_weighted=f1_weighted(scores, labels, threshold) if labels.size else math.nan,
        auroc=auroc(scores, labels) if both else math.nan,
        event_sensitivity=ev,
        tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn,
        n_events=len(events),
        n_events_detected=n_det,
        model=model,
    )
