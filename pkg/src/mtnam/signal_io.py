"""EEG recording ingestion: EDF, CSV, annotation sidecars and a synthetic
generator standing in for clinical recordings."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal as sps

from mtnam.errors import FormatError

Interval = tuple[float, float]

# Center frequencies used when planting ictal rhythms, one per band in
# features.BANDS order.
_BAND_CENTERS = (2.5, 6.0, 10.5, 21.5, 40.0, 65.0, 100.0)


def validate_intervals(intervals: Sequence[Interval], duration: float | None = None) -> list[Interval]:
    """Return ``intervals`` as a sorted list, raising on invalid or overlapping entries."""
    out = []
    for start, end in intervals:
        start, end = float(start), float(end)
        if not (math.isfinite(start) and math.isfinite(end)):
            raise FormatError(f"non-finite seizure interval ({start}, {end})")
        if start < 0:
            raise FormatError(f"negative seizure start {start}")
        if start >= end:
            raise FormatError(f"invalid seizure interval: start {start} >= end {end}")
        if duration is not None and end > duration:
            raise FormatError(f"seizure interval ({start}, {end}) exceeds recording duration {duration}")
        out.append((start, end))
    out.sort()
    for (s0, e0), (s1, e1) in zip(out, out[1:]):
        if s1 < e0:
            raise FormatError(f"overlapping seizure intervals ({s0}, {e0}) and ({s1}, {e1})")
    return out


@dataclass
class Recording:
    """Multichannel EEG at a fixed sampling rate.

    ``samples`` has shape ``(n_channels, n_samples)`` in microvolts.
    ``seizures`` holds sorted, non-overlapping ``(start_s, end_s)`` pairs.
    """

    channels: list[str]
    fs: int
    samples: np.ndarray
    seizures: list[Interval] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise FormatError("samples must be a 2-D (channels, samples) array")
        if len(self.channels) != self.samples.shape[0]:
            raise FormatError(
                f"{len(self.channels)} channel labels for {self.samples.shape[0]} signal rows"
            )
        if int(self.fs) != self.fs or self.fs <= 0:
            raise FormatError(f"sampling rate must be a positive integer, got {self.fs}")
        self.fs = int(self.fs)
        self.channels = [str(c) for c in self.channels]
        self.seizures = validate_intervals(self.seizures, self.duration)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def select(self, labels: Sequence[str]) -> "Recording":
        idx = []
        for lab in labels:
            try:
                idx.append(self.channels.index(lab))
            except ValueError:
                raise FormatError(f"channel {lab!r} not in recording") from None
        return Recording([self.channels[i] for i in idx], self.fs, self.samples[idx], list(self.seizures))


# ---------------------------------------------------------------------------
# EDF


def _field(raw: bytes, what: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError:
        raise FormatError(f"non-ASCII bytes in EDF header field {what}") from None


def _num(raw: bytes, what: str, kind=float):
    text = _field(raw, what)
    try:
        return kind(text)
    except ValueError:
        raise FormatError(f"EDF header field {what} is not a number: {text!r}") from None


def read_edf(path, channels: Sequence[str] | None = None) -> Recording:
    """Read a continuous EDF file into physical units.

    Only plain EDF with 16-bit records is supported; ``EDF Annotations``
    signals are skipped. Seizure intervals are always empty here and come
    from a sidecar annotation file.
    """
    data = Path(path).read_bytes()
    if len(data) < 256:
        raise FormatError(f"{path}: file shorter than the 256-byte EDF header")
    header_bytes = _num(data[184:192], "header bytes", int)
    n_records = _num(data[236:244], "number of data records", int)
    record_dur = _num(data[244:252], "record duration")
    ns = _num(data[252:256], "number of signals", int)
    if ns <= 0 or header_bytes != 256 * (ns + 1):
        raise FormatError(f"{path}: header size {header_bytes} inconsistent with {ns} signals")
    if len(data) < header_bytes:
        raise FormatError(f"{path}: truncated signal headers")
    if record_dur <= 0:
        raise FormatError(f"{path}: non-positive record duration {record_dur}")

    def column(offset, width):
        start = 256 + offset * ns
        return [data[start + i * width: start + (i + 1) * width] for i in range(ns)]

    # Offsets of each per-signal header block, in units of ns bytes.
    labels = [_field(b, "label") for b in column(0, 16)]
    phys_min = [_num(b, "physical minimum") for b in column(16 + 80 + 8, 8)]
    phys_max = [_num(b, "physical maximum") for b in column(16 + 80 + 16, 8)]
    dig_min = [_num(b, "digital minimum") for b in column(16 + 80 + 24, 8)]
    dig_max = [_num(b, "digital maximum") for b in column(16 + 80 + 32, 8)]
    n_per_rec = [_num(b, "samples per record", int) for b in column(16 + 80 + 40 + 80, 8)]

    record_len = sum(n_per_rec)
    body = data[header_bytes:]
    if n_records < 0:
        # -1 is allowed while recording; infer from the file size.
        n_records = len(body) // (2 * record_len)
    if len(body) < 2 * record_len * n_records:
        raise FormatError(
            f"{path}: truncated data records: header declares {n_records} records "
            f"({2 * record_len * n_records} bytes), file has {len(body)}"
        )
    raw = np.frombuffer(body, dtype="<i2", count=record_len * n_records).reshape(n_records, record_len)

    wanted = [i for i, lab in enumerate(labels) if lab != "EDF Annotations"]
    if channels is not None:
        lookup = {lab: i for i, lab in enumerate(labels)}
        missing = [c for c in channels if c not in lookup]
        if missing:
            raise FormatError(f"{path}: channels not found: {missing}")
        wanted = [lookup[c] for c in channels]
    if not wanted:
        raise FormatError(f"{path}: no signal channels")
    rates = {n_per_rec[i] / record_dur for i in wanted}
    if len(rates) != 1:
        raise FormatError(f"{path}: mixed sampling rates among selected channels: {sorted(rates)}")
    fs = rates.pop()
    if abs(fs - round(fs)) > 1e-9:
        raise FormatError(f"{path}: non-integer sampling rate {fs}")

    offsets = np.concatenate([[0], np.cumsum(n_per_rec)])
    out = np.empty((len(wanted), n_records * n_per_rec[wanted[0]]))
    for row, i in enumerate(wanted):
        if dig_max[i] == dig_min[i]:
            raise FormatError(f"{path}: signal {labels[i]!r} has an empty digital range")
        digital = raw[:, offsets[i]:offsets[i + 1]].reshape(-1).astype(np.float64)
        out[row] = (digital - dig_min[i]) * (phys_max[i] - phys_min[i]) / (dig_max[i] - dig_min[i]) + phys_min[i]
    return Recording([labels[i] for i in wanted], int(round(fs)), out)


# ---------------------------------------------------------------------------
# CSV


def read_csv_recording(path, fs: int) -> Recording:
    """One column per channel, header row of labels, one row per sample."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise FormatError(f"{path}: empty recording (header only)")
    values = np.empty((len(body), len(header)))
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: ragged row {lineno}: {len(row)} values under {len(header)} columns")
        try:
            values[lineno - 2] = [float(v) for v in row]
        except ValueError:
            raise FormatError(f"{path}: non-numeric cell in row {lineno}") from None
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite sample value")
    return Recording([h.strip() for h in header], fs, values.T.copy())


def write_csv_recording(rec: Recording, path, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(rec.channels) + "\n")
        for row in rec.samples.T:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def load_annotations(path) -> list[Interval]:
    """Read ``start_s,end_s`` rows. A leading non-numeric header row is allowed."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    intervals = []
    for i, row in enumerate(rows):
        if len(row) != 2:
            raise FormatError(f"{path}: expected 'start_s,end_s', got {row}")
        try:
            intervals.append((float(row[0]), float(row[1])))
        except ValueError:
            if i == 0:
                continue
            raise FormatError(f"{path}: non-numeric interval {row}") from None
    return validate_intervals(intervals)


def write_annotations(intervals: Sequence[Interval], path, comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        for start, end in intervals:
            fh.write(f"{format(start, '.17g')},{format(end, '.17g')}\n")


# ---------------------------------------------------------------------------
# Synthetic recordings


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of a synthetic patient.

    ``band_boost`` gives, per band (delta..high-gamma), the amplitude of the
    rhythm planted during seizures in units of ``noise_scale``.
    ``ll_boost`` scales the whole ictal segment by ``1 + ll_boost``.
    """

    n_channels: int = 4
    duration_s: float = 1800.0
    fs: int = 256
    seizures: tuple[Interval, ...] = ((200.0, 240.0), (420.0, 460.0), (900.0, 945.0), (1400.0, 1450.0))
    noise_scale: float = 10.0
    band_boost: tuple[float, ...] = (3.0, 2.0, 1.0, 0.5, 0.0, 0.0, 0.0)
    ll_boost: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_channels < 1:
            raise FormatError("n_channels must be >= 1")
        if self.fs <= 0 or int(self.fs) != self.fs:
            raise FormatError("fs must be a positive integer")
        if self.duration_s <= 0:
            raise FormatError("duration_s must be positive")
        if self.noise_scale <= 0:
            raise FormatError("noise_scale must be positive")
        if len(self.band_boost) != len(_BAND_CENTERS):
            raise FormatError(f"band_boost needs {len(_BAND_CENTERS)} entries")
        if any(b < 0 for b in self.band_boost) or self.ll_boost < 0:
            raise FormatError("effect sizes must be >= 0")
        validate_intervals(self.seizures, self.duration_s)


def synth_recording(cfg: SynthConfig) -> Recording:
    """Generate a reproducible synthetic recording.

    Background is white noise through a first-order low-pass (a rough 1/f
    shape). Inside each seizure, band rhythms with random phase and a slight
    per-channel frequency jitter are added and the segment is amplified.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration_s * cfg.fs))
    white = rng.standard_normal((cfg.n_channels, n))
    # AR(1) with unit stationary variance after scaling.
    a = 0.9
    x = sps.lfilter([math.sqrt(1 - a * a)], [1.0, -a], white, axis=1) * cfg.noise_scale

    t = np.arange(n) / cfg.fs
    for start, end in cfg.seizures:
        i0, i1 = int(math.ceil(start * cfg.fs)), int(math.ceil(end * cfg.fs))
        seg_t = t[i0:i1]
        # Draws happen regardless of effect size so the stream layout is fixed.
        phases = rng.uniform(0, 2 * np.pi, (cfg.n_channels, len(_BAND_CENTERS)))
        jitter = rng.uniform(-0.2, 0.2, (cfg.n_channels, len(_BAND_CENTERS)))
        for b, (f0, boost) in enumerate(zip(_BAND_CENTERS, cfg.band_boost)):
            if boost == 0 or f0 >= cfg.fs / 2:
                continue
            freq = f0 * (1 + 0.1 * jitter[:, b:b + 1])
            x[:, i0:i1] += boost * cfg.noise_scale * np.sin(2 * np.pi * freq * seg_t + phases[:, b:b + 1])
        x[:, i0:i1] *= 1 + cfg.ll_boost
    labels = [f"ch_{c}" for c in range(cfg.n_channels)]
    return Recording(labels, cfg.fs, x, list(cfg.seizures))
