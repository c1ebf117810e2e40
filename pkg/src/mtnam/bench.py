"""FLOP accounting and single-window latency measurement.

FLOP counts follow a fixed, versioned rule set (``FLOP_RULES``). Absolute
numbers depend on these rules; ratios between models are what matters.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

FLOP_RULES_VERSION = 1
FLOP_RULES = {
    "linear": "2 * in * out",
    "activation": "1 per unit",
    "comparison": 1,
    "add": 1,
    "sigmoid": 4,
    "normalize": "3 * M + 2",
    "dot": "2 * M",
    "entropy": 10,
    "centroid_update": "3 * M + 2",
}
SIGMOID = 4
ENTROPY = 10


def linear(n_in: int, n_out: int) -> int:
    return 2 * n_in * n_out


def normalize(M: int) -> int:
    return 3 * M + 2


def dot(M: int) -> int:
    return 2 * M


@dataclass(frozen=True)
class ModelDescriptor:
    kind: str  # nam | mtnam | lr | dnn
    M: int
    hidden: int = 0
    depth: int = 0
    adapter: bool = False

    @property
    def name(self) -> str:
        base = {
            "nam": f"NAM(h={self.hidden})",
            "mtnam": f"MT{self.depth}-NAM",
            "lr": "LR",
            "dnn": f"DNN(h={self.hidden})",
        }.get(self.kind, self.kind)
        return base + ("+T3A" if self.adapter else "")


def adapter_flops(M: int) -> int:
    """Extra work of one adapter step on top of the offline forward.

    Entropy gate, normalization of the contribution vector, running-mean
    update of one centroid, centroid difference, the adjusted dot product
    and its sigmoid.
    """
    return ENTROPY + normalize(M) + (3 * M + 2) + M + dot(M) + SIGMOID


def count_flops(desc: ModelDescriptor) -> int:
    M = desc.M
    if M < 1:
        raise ValueError("model descriptor needs M >= 1")
    if desc.kind == "nam":
        if desc.hidden < 1:
            raise ValueError("NAM descriptor needs hidden >= 1")
        h = desc.hidden
        per_net = linear(1, h) + h + linear(h, 1)
        base = M * per_net + (M - 1) + SIGMOID
    elif desc.kind == "mtnam":
        if desc.depth < 1:
            raise ValueError("MT-NAM descriptor needs depth >= 1")
        base = M * desc.depth + (M - 1) + SIGMOID
    elif desc.kind == "lr":
        base = linear(M, 1) + SIGMOID
    elif desc.kind == "dnn":
        if desc.hidden < 1:
            raise ValueError("DNN descriptor needs hidden >= 1")
        h = desc.hidden
        base = linear(M, h) + h + linear(h, 1) + SIGMOID
    else:
        raise ValueError(f"unknown model kind {desc.kind!r}")
    if desc.adapter:
        if desc.kind not in ("nam", "mtnam"):
            raise ValueError("the adapter applies to additive models only")
        base += adapter_flops(M)
    return base


def describe(model, adapter: bool = False) -> ModelDescriptor:
    from mtnam.mtnam import MtNamModel
    from mtnam.nam import LogisticModel, MlpModel, NamModel

    if isinstance(model, NamModel):
        return ModelDescriptor("nam", model.M, hidden=model.hidden, adapter=adapter)
    if isinstance(model, MtNamModel):
        return ModelDescriptor("mtnam", model.M, depth=model.depth, adapter=adapter)
    if isinstance(model, LogisticModel):
        return ModelDescriptor("lr", model.M)
    if isinstance(model, MlpModel):
        return ModelDescriptor("dnn", model.M, hidden=model.hidden)
    raise TypeError(f"cannot describe {type(model).__name__}")


@dataclass
class LatencyReport:
    model: str
    mean_us: float
    std_us: float
    min_us: float
    R: int
    W: int


def measure_latency(forward_fn: Callable, inputs: Sequence, R: int = 1000, W: int = 50,
                    model: str = "") -> LatencyReport:
    """Time ``R`` single-window calls after ``W`` discarded warmups.

    Inputs are cycled. Each call is timed on its own with the monotonic
    performance counter.
    """
    if R < 30 or W < 5:
        raise ValueError("latency runs need R >= 30 and W >= 5")
    if len(inputs) == 0:
        raise ValueError("latency runs need at least one input")
    n = len(inputs)
    for i in range(W):
        forward_fn(inputs[i % n])
    times = np.empty(R)
    clock = time.perf_counter_ns
    for i in range(R):
        x = inputs[i % n]
        t0 = clock()
        forward_fn(x)
        times[i] = clock() - t0
    times = np.maximum(times, 1.0) / 1000.0
    return LatencyReport(model, float(times.mean()), float(times.std()), float(times.min()), R, W)


BENCH_HEADER = "model,flops,lat_mean_us,lat_std_us,lat_min_us,R,W,host_tag"


def host_tag() -> str:
    return f"{platform.node() or 'host'}-{platform.machine()}".replace(",", "_")


def bench_row(name: str, flops: int, lat: LatencyReport | None, tag: str) -> str:
    if lat is None:
        return f"{name},{flops},nan,nan,nan,0,0,{tag}"
    return (f"{name},{flops},{lat.mean_us:.6g},{lat.std_us:.6g},{lat.min_us:.6g},"
            f"{lat.R},{lat.W},{tag}")


def single_forward(model, adapter_h0: float | None = None) -> Callable:
    """A one-window forward for any supported model, optionally with an adapter."""
    from mtnam import t3a
    from mtnam.nam import sigmoid

    if adapter_h0 is not None:
        fwd = t3a.forward_fn_for(model)
        state = t3a.init_adapter(model.M, adapter_h0)

        def adapted(x):
            contrib, _ = fwd(x)
            return t3a.step(state, contrib).y_adjusted

        return adapted
    if hasattr(model, "trees") or hasattr(model, "feature_nets"):
        return t3a.forward_fn_for(model)
    return lambda x: float(sigmoid(model.logits(x[None, :])[0]))
