"""Line-oriented text format shared by every model file.

Each non-comment line is ``key value...``; floats are written with 17
significant digits so files round-trip bit-exactly. The first record is
always ``format mtnam-model <version>`` followed by ``kind <name>``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from mtnam.errors import FormatError, MissingInputError

FORMAT_NAME = "mtnam-model"
FORMAT_VERSION = 1


def fmt(v: float) -> str:
    return format(float(v), ".17g")


class ModelWriter:
    def __init__(self, kind: str, comment: str | None = None):
        self.lines = []
        if comment:
            self.lines.extend(f"# {c}" for c in comment.splitlines())
        self.lines.append(f"format {FORMAT_NAME} {FORMAT_VERSION}")
        self.lines.append(f"kind {kind}")

    def put(self, key: str, *values) -> None:
        parts = [key]
        for v in values:
            if isinstance(v, (np.ndarray, list, tuple)):
                parts.extend(fmt(x) for x in np.ravel(v))
            elif isinstance(v, (float, np.floating)):
                parts.append(fmt(v))
            else:
                parts.append(str(v))
        self.lines.append(" ".join(parts))

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.text())


class ModelReader:
    """Sequential reader over ``key value...`` records."""

    def __init__(self, text: str, source: str = "<model>"):
        self.source = source
        self.records = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, *rest = line.split()
            self.records.append((lineno, key, rest))
        self.pos = 0
        fmt_rec = self.expect("format")
        if fmt_rec[0] != FORMAT_NAME or int(fmt_rec[1]) != FORMAT_VERSION:
            raise FormatError(f"{source}: unsupported model format {' '.join(fmt_rec)}")
        self.kind = self.expect("kind")[0]

    @classmethod
    def open(cls, path) -> "ModelReader":
        p = Path(path)
        if not p.exists():
            raise MissingInputError(f"model file not found: {p}")
        return cls(p.read_text(), str(p))

    def expect(self, key: str) -> list[str]:
        if self.pos >= len(self.records):
            raise FormatError(f"{self.source}: unexpected end of file, wanted {key!r}")
        lineno, got, rest = self.records[self.pos]
        if got != key:
            raise FormatError(f"{self.source}:{lineno}: expected {key!r}, found {got!r}")
        self.pos += 1
        return rest

    def peek(self) -> str | None:
        return self.records[self.pos][1] if self.pos < len(self.records) else None

    def int(self, key: str) -> int:
        return int(self.expect(key)[0])

    def float(self, key: str) -> float:
        return float(self.expect(key)[0])

    def str(self, key: str) -> str:
        return self.expect(key)[0]

    def array(self, key: str, n: int | None = None) -> np.ndarray:
        vals = np.array([float(v) for v in self.expect(key)], dtype=np.float64)
        if n is not None and vals.size != n:
            raise FormatError(f"{self.source}: {key!r} has {vals.size} values, expected {n}")
        return vals


def put_meta(w: ModelWriter, meta: dict) -> None:
    for k in sorted(meta):
        w.put(f"meta.{k}", meta[k])


def read_meta(r: ModelReader) -> dict:
    meta = {}
    while (key := r.peek()) is not None and key.startswith("meta."):
        meta[key[5:]] = " ".join(r.expect(key))
    return meta


def put_scaler(w: ModelWriter, scaler) -> None:
    w.put("scaler.mean", scaler.mean)
    w.put("scaler.std", scaler.std)


def read_scaler(r: ModelReader, M: int):
    from mtnam.features import Scaler

    return Scaler(r.array("scaler.mean", M), r.array("scaler.std", M))
