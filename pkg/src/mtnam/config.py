"""Pipeline configuration: a line-oriented ``section.key = value`` file.

Blank lines and ``#`` comments are ignored. Relative paths are resolved
against the directory holding the config file. Every stage gets a hash
over the sections it (and its upstream stages) depend on; outputs carry
that hash in a header comment.
"""

from __future__ import annotations

import builtins
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from mtnam.errors import ConfigError, MissingInputError

DEFAULTS = {
    "run.seed": "0",
    "run.out_dir": "out",
    "data.source": "synth",
    "data.edf": "",
    "data.csv": "",
    "data.fs": "256",
    "data.annotations": "",
    "data.channels": "",
    "synth.n_channels": "4",
    "synth.duration_s": "1800",
    "synth.fs": "256",
    "synth.seizures": "200-240, 420-460, 900-945, 1400-1450",
    "synth.noise_scale": "10",
    "synth.band_boost": "3, 2, 1, 0.5, 0, 0, 0",
    "synth.ll_boost": "1",
    "features.win_s": "1",
    "split.train": "0.15",
    "split.val": "0.15",
    "split.test": "0.70",
    "nam.hidden": "10, 50, 100, 200",
    "nam.activations": "relu, exu",
    "train.lr": "0.001",
    "train.epochs": "200",
    "train.batch_size": "128",
    "train.beta1": "0.9",
    "train.beta2": "0.999",
    "train.eps": "1e-8",
    "train.downsample_ratio": "10",
    "train.patience": "20",
    "baselines.enabled": "true",
    "baselines.lr_l2": "0.01, 0.1, 1",
    "baselines.dnn_hidden": "50, 100, 200, 300",
    "baselines.dnn_activations": "relu, leaky_relu",
    "distill.depths": "1, 2, 4",
    "distill.plot_features": "4",
    "t3a.h0_grid": "",
    "t3a.h0_points": "20",
    "eval.threshold": "0.5",
    "bench.R": "1000",
    "bench.W": "50",
    "bench.full_scale": "true",
    "bench.full_M": "207",
    "bench.full_hidden": "100",
    "bench.host_tag": "",
}

# Sections each stage depends on, cumulative along the pipeline.
STAGE_SECTIONS = {
    "synth": ("data", "synth"),
    "extract": ("data", "synth", "features"),
    "train": ("data", "synth", "features", "split", "nam", "train", "baselines"),
    "distill": ("data", "synth", "features", "split", "nam", "train", "distill"),
    "eval": ("data", "synth", "features", "split", "nam", "train", "baselines", "distill", "eval"),
    "adapt-eval": ("data", "synth", "features", "split", "nam", "train", "distill", "t3a", "eval"),
    "bench": ("data", "synth", "features", "split", "nam", "train", "distill", "bench"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} lacks a section")
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        p = Path(path)
        if not p.exists():
            raise MissingInputError(f"config file not found: {p}")
        vals = dict(DEFAULTS)
        vals.update(parse_config_text(p.read_text(), str(p)))
        return cls(vals, p.resolve().parent)

    @classmethod
    def from_text(cls, text: str, base_dir=".") -> "PipelineConfig":
        vals = dict(DEFAULTS)
        vals.update(parse_config_text(text))
        return cls(vals, Path(base_dir).resolve())

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        self.values[key] = str(value)

    def str(self, key: str) -> str:
        return self.values[key]

    def int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    def bool(self, key: str) -> bool:
        v = self.values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {self.values[key]!r}")

    def list(self, key: str, kind=builtins.str) -> list:
        raw = self.values[key].strip()
        if not raw:
            return []
        try:
            return [kind(item.strip()) for item in raw.split(",")]
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r} as a list of {kind.__name__}") from None

    def intervals(self, key: str) -> list[tuple[float, float]]:
        out = []
        for item in self.list(key):
            try:
                a, b = item.split("-")
                out.append((float(a), float(b)))
            except ValueError:
                raise ConfigError(f"{key}: interval {item!r} is not 'start-end'") from None
        return out

    def path(self, key: str) -> Path | None:
        raw = self.values[key].strip()
        if not raw:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path("run.out_dir")

    @property
    def seed(self) -> int:
        return self.int("run.seed")

    def stage_hash(self, stage: str) -> str:
        sections = STAGE_SECTIONS[stage]
        items = [f"run.seed={self.values['run.seed']}"]
        items += [f"{k}={self.values[k]}" for k in sorted(self.values) if k.split(".")[0] in sections]
        return hashlib.sha256("\n".join(items).encode()).hexdigest()[:16]
