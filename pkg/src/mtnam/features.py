"""Windowed EEG features: 7 band powers, line length and variance per channel.

Feature layout is channel-major: column ``c * N_PER_CHANNEL + i`` holds
feature ``i`` of channel ``c``, with ``i`` indexing FEATURE_NAMES.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from mtnam.errors import FormatError
from mtnam.signal_io import Recording

BANDS = (
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("low_gamma", 30.0, 50.0),
    ("gamma", 50.0, 80.0),
    ("high_gamma", 80.0, 120.0),
)
FEATURE_NAMES = tuple(name for name, _, _ in BANDS) + ("line_length", "variance")
N_PER_CHANNEL = len(FEATURE_NAMES)

STD_FLOOR = 1e-8


class BandCoverageWarning(UserWarning):
    """A band lies (partly) above the Nyquist frequency of the recording."""


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    labels: np.ndarray
    window_start_s: np.ndarray
    win_s: float = 1.0

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise FormatError("feature rows must be 2-D")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.window_start_s = np.asarray(self.window_start_s, dtype=np.float64)
        n = self.rows.shape[0]
        if self.labels.shape != (n,) or self.window_start_s.shape != (n,):
            raise FormatError("labels and window_start_s must have one entry per row")
        if not np.all(np.isfinite(self.rows)):
            raise FormatError("feature rows contain NaN or Inf")

    @property
    def M(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def subset(self, index) -> "FeatureMatrix":
        return FeatureMatrix(self.rows[index], self.labels[index], self.window_start_s[index], self.win_s)

    def with_rows(self, rows: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(rows, self.labels.copy(), self.window_start_s.copy(), self.win_s)


def feature_index(channel: int, feature: int) -> int:
    return channel * N_PER_CHANNEL + feature


def feature_label(j: int, channels=None) -> str:
    c, i = divmod(j, N_PER_CHANNEL)
    ch = channels[c] if channels is not None else f"ch_{c}"
    return f"{ch}:{FEATURE_NAMES[i]}"


def window_bounds(recording: Recording, win_s: float = 1.0) -> list[tuple[int, int, int]]:
    """Non-overlapping ``(start_sample, end_sample, label)`` windows.

    A window is ictal when at least one of its samples falls inside a
    seizure interval. A trailing partial window is dropped.
    """
    length = win_s * recording.fs
    if length <= 0 or abs(length - round(length)) > 1e-9:
        raise FormatError(f"window of {win_s} s is not a whole number of samples at {recording.fs} Hz")
    length = int(round(length))
    n_win = recording.n_samples // length
    if n_win == 0:
        raise FormatError(f"recording of {recording.duration} s is shorter than one {win_s} s window")
    ictal = []
    for start, end in recording.seizures:
        first = math.ceil(start * recording.fs - 1e-9)
        stop = math.ceil(end * recording.fs - 1e-9)
        if stop > first:
            ictal.append((first, stop))
    out = []
    for w in range(n_win):
        a, b = w * length, (w + 1) * length
        label = int(any(first < b and stop > a for first, stop in ictal))
        out.append((a, b, label))
    return out


def line_length(samples) -> float:
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ValueError("line length needs at least 2 samples")
    return float(np.abs(np.diff(x)).sum())


def variance(samples) -> float:
    """Population variance."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 1:
        raise ValueError("variance needs at least 1 sample")
    return float(np.mean((x - x.mean()) ** 2))


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def periodogram(samples, fs: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided rectangular-window periodogram.

    Returns ``(freqs, power)`` with power scaled so that ``power.sum()``
    equals the mean square of the input. The signal is zero-padded to the
    next power of two.
    """
    x = np.asarray(samples, dtype=np.float64)
    L = x.size
    nfft = _next_pow2(L)
    X = np.fft.rfft(x, n=nfft)
    power = np.abs(X) ** 2 / (L * nfft)
    power[1:] *= 2
    if nfft % 2 == 0:
        power[-1] /= 2
    freqs = np.arange(power.size) * fs / nfft
    return freqs, power


def _band_masks(freqs: np.ndarray, fs: float) -> list[np.ndarray]:
    masks = []
    for name, lo, hi in BANDS:
        if lo >= fs / 2:
            warnings.warn(f"band {name} ({lo}-{hi} Hz) is above Nyquist at fs={fs}; reported as 0",
                          BandCoverageWarning, stacklevel=3)
        masks.append((freqs >= lo) & (freqs < hi) & (freqs > 0))
    return masks


def band_powers(samples, fs: float) -> np.ndarray:
    """Power in each of the 7 bands; edges are lower-inclusive, upper-exclusive."""
    freqs, power = periodogram(samples, fs)
    return np.array([power[m].sum() for m in _band_masks(freqs, fs)])


def extract_features(recording: Recording, win_s: float = 1.0) -> FeatureMatrix:
    bounds = window_bounds(recording, win_s)
    length = bounds[0][1] - bounds[0][0]
    n_win = len(bounds)
    # (channels, windows, samples)
    seg = recording.samples[:, : n_win * length].reshape(recording.n_channels, n_win, length)

    nfft = _next_pow2(length)
    X = np.fft.rfft(seg, n=nfft, axis=2)
    power = np.abs(X) ** 2 / (length * nfft)
    power[..., 1:] *= 2
    if nfft % 2 == 0:
        power[..., -1] /= 2
    freqs = np.arange(power.shape[2]) * recording.fs / nfft
    bands = np.stack([power[..., m].sum(axis=2) for m in _band_masks(freqs, recording.fs)], axis=2)

    ll = np.abs(np.diff(seg, axis=2)).sum(axis=2)
    var = np.mean((seg - seg.mean(axis=2, keepdims=True)) ** 2, axis=2)
    feats = np.concatenate([bands, ll[..., None], var[..., None]], axis=2)  # (C, W, F)
    rows = feats.transpose(1, 0, 2).reshape(n_win, recording.n_channels * N_PER_CHANNEL)
    labels = np.array([lab for _, _, lab in bounds])
    starts = np.array([a / recording.fs for a, _, _ in bounds])
    return FeatureMatrix(rows, labels, starts, win_s)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) / self.std


def fit_scaler(train: FeatureMatrix) -> Scaler:
    if len(train) == 0:
        raise ValueError("cannot fit a scaler on an empty feature matrix")
    const = np.all(train.rows == train.rows[0], axis=0)
    # Constant columns map to exact zeros on the fit set.
    mean = np.where(const, train.rows[0], train.rows.mean(axis=0))
    std = np.where(const, 1.0, np.maximum(train.rows.std(axis=0), STD_FLOOR))
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, fm: FeatureMatrix) -> FeatureMatrix:
    return fm.with_rows(scaler.transform(fm.rows))


# ---------------------------------------------------------------------------
# Feature CSV


def write_feature_csv(fm: FeatureMatrix, path, comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(f"# win_s={format(fm.win_s, '.17g')}\n")
        fh.write(",".join(["window_start_s", "label"] + [f"f_{j}" for j in range(fm.M)]) + "\n")
        for t, y, row in zip(fm.window_start_s, fm.labels, fm.rows):
            fh.write(",".join([format(t, ".17g"), str(int(y))] + [format(v, ".17g") for v in row]) + "\n")


def read_feature_csv(path) -> FeatureMatrix:
    win_s = 1.0
    header = None
    data = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("win_s="):
                    win_s = float(line.split("=", 1)[1])
                continue
            parts = line.split(",")
            if header is None:
                header = parts
                if header[:2] != ["window_start_s", "label"]:
                    raise FormatError(f"{path}: unexpected feature CSV header")
                continue
            if len(parts) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
            try:
                data.append([float(p) for p in parts])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from None
    if header is None:
        raise FormatError(f"{path}: empty feature file")
    arr = np.array(data, dtype=np.float64).reshape(-1, len(header))
    return FeatureMatrix(arr[:, 2:], arr[:, 1].astype(np.int64), arr[:, 0], win_s)
