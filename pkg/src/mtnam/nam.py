"""Neural additive model teacher, its trainer, and the LR / DNN baselines.

All three model families share one training loop: mini-batch Adam on mean
binary cross-entropy with early stopping on validation weighted F1. They
operate on standardized inputs; the fitted ``Scaler`` travels with the
model.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mtnam import _kernels
from mtnam.errors import FormatError, TrainingDivergedError
from mtnam.evaluation import f1_weighted
from mtnam.features import FeatureMatrix, Scaler, apply_scaler, fit_scaler
from mtnam.modelio import ModelReader, ModelWriter, put_meta, put_scaler, read_meta, read_scaler
from mtnam.rng import substream

log = logging.getLogger(__name__)

RELU = "relu"
EXU = "exu"
LEAKY_RELU = "leaky_relu"
EXU_CAP = 1.0
LEAKY_SLOPE = 0.01


def sigmoid(t):
    return 1.0 / (1.0 + np.exp(-np.clip(t, -_kernels.LOGIT_CLAMP, _kernels.LOGIT_CLAMP)))


def bce_from_logits(logits, y) -> float:
    """Mean binary cross-entropy computed from logits without forming log(0)."""
    logits = np.clip(logits, -_kernels.LOGIT_CLAMP, _kernels.LOGIT_CLAMP)
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    downsample_ratio: float = 10.0
    seed: int = 0
    patience: int = 20

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.eps <= 0 or self.patience <= 0:
            raise ValueError("learning rate, batch size, eps and patience must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.downsample_ratio < 1:
            raise ValueError("downsample ratio must be >= 1")


class Adam:
    """Bias-corrected Adam over a dict of numpy parameter arrays."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# NAM


@dataclass
class FeatureNet:
    """One scalar-to-scalar feature network (a view into a ``NamModel``)."""

    w: np.ndarray
    b: np.ndarray
    v: np.ndarray
    c: float
    activation: str = RELU

    @property
    def hidden(self) -> int:
        return self.w.size


def _hidden(z, w, b, activation):
    if activation == RELU:
        return np.maximum(w * z + b, 0.0)
    if activation == EXU:
        return np.clip(np.exp(w) * (z - b), 0.0, EXU_CAP)
    raise ValueError(f"unknown activation {activation!r}")


def feature_forward(net: FeatureNet, z: float) -> float:
    return float(np.dot(net.v, _hidden(z, net.w, net.b, net.activation)) + net.c)


@dataclass(frozen=True)
class NamArch:
    hidden: int = 100
    activation: str = RELU

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if self.activation not in (RELU, EXU):
            raise ValueError(f"NAM activation must be relu or exu, got {self.activation!r}")


class NamModel:
    """``M`` independent feature networks stored as stacked ``(M, h)`` arrays."""

    kind = "nam"

    def __init__(self, W, B, V, C, activation=RELU, scaler: Scaler | None = None, meta=None):
        self.params = {
            "W": np.ascontiguousarray(W, dtype=np.float64),
            "B": np.ascontiguousarray(B, dtype=np.float64),
            "V": np.ascontiguousarray(V, dtype=np.float64),
            "C": np.ascontiguousarray(C, dtype=np.float64),
        }
        M, h = self.params["W"].shape
        for k in ("B", "V"):
            if self.params[k].shape != (M, h):
                raise FormatError(f"NAM parameter {k} has shape {self.params[k].shape}, expected {(M, h)}")
        if self.params["C"].shape != (M,):
            raise FormatError("NAM output biases must have one entry per feature")
        self.activation = NamArch(h, activation).activation
        self.scaler = scaler
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, M: int, arch: NamArch, rng: np.random.Generator, scaler=None) -> "NamModel":
        h = arch.hidden
        if M < 1:
            raise ValueError("M must be >= 1")
        if arch.activation == RELU:
            W = rng.uniform(-1.0, 1.0, (M, h))
            B = np.zeros((M, h))
        else:
            W = rng.normal(4.0, 0.5, (M, h))
            # Spread the ExU kinks; with zero biases every unit would switch at z = 0.
            B = np.clip(rng.normal(0.0, 0.5, (M, h)), -1.0, 1.0)
        V = rng.uniform(-1 / math.sqrt(h), 1 / math.sqrt(h), (M, h))
        return cls(W, B, V, np.zeros(M), arch.activation, scaler)

    @property
    def M(self) -> int:
        return self.params["W"].shape[0]

    @property
    def hidden(self) -> int:
        return self.params["W"].shape[1]

    @property
    def feature_nets(self) -> list[FeatureNet]:
        p = self.params
        return [FeatureNet(p["W"][j], p["B"][j], p["V"][j], float(p["C"][j]), self.activation)
                for j in range(self.M)]

    def contributions(self, X: np.ndarray) -> np.ndarray:
        """Per-feature outputs for a batch ``(n, M)`` of standardized inputs."""
        p = self.params
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape)
        for s in range(0, X.shape[0], 512):
            H = _hidden(X[s:s + 512, :, None], p["W"], p["B"], self.activation)
            out[s:s + 512] = np.einsum("nmh,mh->nm", H, p["V"]) + p["C"]
        return out

    def logits(self, X) -> np.ndarray:
        return self.contributions(X).sum(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.logits(X))

    def loss_and_grad(self, X, y) -> tuple[float, dict]:
        p = self.params
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        Z = X[:, :, None]
        if self.activation == RELU:
            A = p["W"] * Z + p["B"]
            H = np.maximum(A, 0.0)
        else:
            E = np.exp(p["W"])
            A = E * (Z - p["B"])
            H = np.clip(A, 0.0, EXU_CAP)
        logit = np.einsum("nmh,mh->n", H, p["V"]) + p["C"].sum()
        loss = bce_from_logits(logit, y)
        g = (sigmoid(logit) - y) / n  # d loss / d logit
        gV = np.einsum("n,nmh->mh", g, H)
        dH = g[:, None, None] * p["V"]
        if self.activation == RELU:
            dA = dH * (A > 0)
            gW = np.einsum("nmh,nm->mh", dA, X)
            gB = dA.sum(axis=0)
        else:
            dA = dH * ((A > 0) & (A < EXU_CAP))
            gW = np.einsum("nmh,nmh->mh", dA, A)
            gB = -E * dA.sum(axis=0)
        gC = np.full(self.M, g.sum())
        return loss, {"W": gW, "B": gB, "V": gV, "C": gC}

    def kernel_args(self):
        p = self.params
        return p["W"], p["B"], p["V"], p["C"]

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(self.params[k].tobytes())
        return h.hexdigest()[:16]

    def save(self, path, comment=None) -> None:
        w = ModelWriter(self.kind, comment)
        w.put("M", self.M)
        w.put("hidden", self.hidden)
        w.put("activation", self.activation)
        put_scaler(w, self.scaler or Scaler(np.zeros(self.M), np.ones(self.M)))
        put_meta(w, self.meta)
        p = self.params
        for j in range(self.M):
            w.put("net", j)
            w.put("w", p["W"][j])
            w.put("b", p["B"][j])
            w.put("v", p["V"][j])
            w.put("c", p["C"][j])
        w.save(path)

    @classmethod
    def load(cls, path) -> "NamModel":
        r = ModelReader.open(path)
        if r.kind != cls.kind:
            raise FormatError(f"{path}: expected a {cls.kind} model, found {r.kind}")
        M, h = r.int("M"), r.int("hidden")
        act = r.str("activation")
        scaler = read_scaler(r, M)
        meta = read_meta(r)
        W, B, V, C = np.empty((M, h)), np.empty((M, h)), np.empty((M, h)), np.empty(M)
        for j in range(M):
            if r.int("net") != j:
                raise FormatError(f"{path}: feature nets out of order at {j}")
            W[j], B[j], V[j] = r.array("w", h), r.array("b", h), r.array("v", h)
            C[j] = r.float("c")
        return cls(W, B, V, C, act, scaler, meta)


def nam_forward(model: NamModel, x) -> tuple[np.ndarray, float]:
    """Single-window forward: ``(contrib, y_hat)`` with ``y_hat = sigmoid(sum(contrib))``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (model.M,):
        raise ValueError(f"expected an input of length {model.M}, got shape {x.shape}")
    kernel = _kernels.nam_relu_contrib if model.activation == RELU else _kernels.nam_exu_contrib
    return kernel(x, *model.kernel_args())


# ---------------------------------------------------------------------------
# Baselines


class LogisticModel:
    kind = "lr"

    def __init__(self, w, b=0.0, l2=0.01, scaler=None, meta=None):
        self.params = {"w": np.asarray(w, dtype=np.float64).copy(), "b": np.array([float(np.ravel(b)[0])])}
        self.l2 = float(l2)
        self.scaler = scaler
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, M, l2, rng, scaler=None):
        return cls(np.zeros(M), 0.0, l2, scaler)

    @property
    def M(self) -> int:
        return self.params["w"].size

    def logits(self, X):
        return np.asarray(X, dtype=np.float64) @ self.params["w"] + self.params["b"][0]

    def predict_proba(self, X):
        return sigmoid(self.logits(X))

    def loss_and_grad(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        w = self.params["w"]
        logit = self.logits(X)
        loss = bce_from_logits(logit, y) + 0.5 * self.l2 * float(w @ w)
        g = (sigmoid(logit) - y) / X.shape[0]
        return loss, {"w": X.T @ g + self.l2 * w, "b": np.array([g.sum()])}

    def save(self, path, comment=None):
        w = ModelWriter(self.kind, comment)
        w.put("M", self.M)
        w.put("l2", self.l2)
        put_scaler(w, self.scaler or Scaler(np.zeros(self.M), np.ones(self.M)))
        put_meta(w, self.meta)
        w.put("w", self.params["w"])
        w.put("b", self.params["b"])
        w.save(path)

    @classmethod
    def load(cls, path):
        r = ModelReader.open(path)
        if r.kind != cls.kind:
            raise FormatError(f"{path}: expected a {cls.kind} model, found {r.kind}")
        M = r.int("M")
        l2 = r.float("l2")
        scaler = read_scaler(r, M)
        meta = read_meta(r)
        return cls(r.array("w", M), r.array("b", 1), l2, scaler, meta)


class MlpModel:
    """One-hidden-layer MLP on the full feature vector."""

    kind = "dnn"

    def __init__(self, W1, b1, w2, b2, activation=RELU, scaler=None, meta=None):
        if activation not in (RELU, LEAKY_RELU):
            raise ValueError(f"DNN activation must be relu or leaky_relu, got {activation!r}")
        self.params = {
            "W1": np.asarray(W1, dtype=np.float64).copy(),
            "b1": np.asarray(b1, dtype=np.float64).copy(),
            "w2": np.asarray(w2, dtype=np.float64).copy(),
            "b2": np.array([float(np.ravel(b2)[0])]),
        }
        self.activation = activation
        self.scaler = scaler
        self.meta = dict(meta or {})

    @classmethod
    def init(cls, M, hidden, activation, rng, scaler=None):
        W1 = rng.uniform(-1 / math.sqrt(M), 1 / math.sqrt(M), (M, hidden))
        w2 = rng.uniform(-1 / math.sqrt(hidden), 1 / math.sqrt(hidden), hidden)
        return cls(W1, np.zeros(hidden), w2, 0.0, activation, scaler)

    @property
    def M(self) -> int:
        return self.params["W1"].shape[0]

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[1]

    def _act(self, A):
        slope = 0.0 if self.activation == RELU else LEAKY_SLOPE
        return np.where(A > 0, A, slope * A), np.where(A > 0, 1.0, slope)

    def logits(self, X):
        p = self.params
        H, _ = self._act(np.asarray(X, dtype=np.float64) @ p["W1"] + p["b1"])
        return H @ p["w2"] + p["b2"][0]

    def predict_proba(self, X):
        return sigmoid(self.logits(X))

    def loss_and_grad(self, X, y):
        p = self.params
        X = np.asarray(X, dtype=np.float64)
        H, dact = self._act(X @ p["W1"] + p["b1"])
        logit = H @ p["w2"] + p["b2"][0]
        loss = bce_from_logits(logit, y)
        g = (sigmoid(logit) - y) / X.shape[0]
        dA = np.outer(g, p["w2"]) * dact
        return loss, {"W1": X.T @ dA, "b1": dA.sum(axis=0), "w2": H.T @ g, "b2": np.array([g.sum()])}

    def save(self, path, comment=None):
        w = ModelWriter(self.kind, comment)
        w.put("M", self.M)
        w.put("hidden", self.hidden)
        w.put("activation", self.activation)
        put_scaler(w, self.scaler or Scaler(np.zeros(self.M), np.ones(self.M)))
        put_meta(w, self.meta)
        for i in range(self.M):
            w.put("W1", self.params["W1"][i])
        w.put("b1", self.params["b1"])
        w.put("w2", self.params["w2"])
        w.put("b2", self.params["b2"])
        w.save(path)

    @classmethod
    def load(cls, path):
        r = ModelReader.open(path)
        if r.kind != cls.kind:
            raise FormatError(f"{path}: expected a {cls.kind} model, found {r.kind}")
        M, h = r.int("M"), r.int("hidden")
        act = r.str("activation")
        scaler = read_scaler(r, M)
        meta = read_meta(r)
        W1 = np.stack([r.array("W1", h) for _ in range(M)])
        return cls(W1, r.array("b1", h), r.array("w2", h), r.array("b2", 1), act, scaler, meta)


def load_model(path):
    """Load any model file, dispatching on its ``kind`` record."""
    from mtnam.mtnam import MtNamModel

    kinds = {c.kind: c for c in (NamModel, LogisticModel, MlpModel, MtNamModel)}
    kind = ModelReader.open(path).kind
    if kind not in kinds:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    return kinds[kind].load(path)


# ---------------------------------------------------------------------------
# Training


def downsample_nonictal(fm: FeatureMatrix, ratio: float, seed) -> FeatureMatrix:
    """Keep every ictal row and at most ``ratio`` non-ictal rows per ictal row.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    ictal = np.flatnonzero(fm.labels == 1)
    calm = np.flatnonzero(fm.labels == 0)
    if ictal.size == 0:
        raise ValueError("cannot downsample: no ictal rows")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep_n = min(int(ratio * ictal.size), calm.size)
    kept = rng.choice(calm, size=keep_n, replace=False)
    return fm.subset(np.sort(np.concatenate([ictal, kept])))


@dataclass
class TrainingHistory:
    loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = math.nan


def fit_model(model, X, y, X_val, y_val, cfg: TrainConfig, rng: np.random.Generator):
    """Adam on mean BCE; restores the parameters of the best validation-F1 epoch.

    ``best_epoch == 0`` means the initial parameters were never beaten.
    """
    hist = TrainingHistory()
    y = np.asarray(y, dtype=np.float64)
    if cfg.epochs == 0:
        return model, hist

    def score():
        # F1 saturates on easy data; validation BCE breaks ties.
        p = model.logits(X_val)
        return f1_weighted(sigmoid(p), y_val), -bce_from_logits(p, y_val)

    best_score = score()
    hist.best_val_f1 = best_score[0]
    best = copy.deepcopy(model.params)
    opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    stale = 0
    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grad(X[idx], y[idx])
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergedError(
                    f"non-finite loss or gradient at epoch {epoch} (lr={cfg.lr}); try a smaller learning rate"
                )
            opt.step(grads)
            total += loss * idx.size
        hist.loss.append(total / n)
        current = score()
        hist.val_f1.append(current[0])
        if current > best_score:
            best_score = current
            hist.best_val_f1, hist.best_epoch = current[0], epoch
            best = copy.deepcopy(model.params)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    for k in model.params:
        model.params[k][...] = best[k]
    return model, hist


def _prepare(train: FeatureMatrix, val: FeatureMatrix, cfg: TrainConfig):
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    ds = downsample_nonictal(train, cfg.downsample_ratio, substream(cfg.seed, "downsample"))
    if ds.labels.min() == ds.labels.max():
        raise ValueError("training set needs both classes after downsampling")
    scaler = fit_scaler(ds)
    return ds, scaler, apply_scaler(scaler, ds), apply_scaler(scaler, val)


def _meta(cfg: TrainConfig, hist: TrainingHistory, n_train: int, **extra) -> dict:
    return {
        "seed": cfg.seed, "lr": cfg.lr, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
        "beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps, "patience": cfg.patience,
        "downsample_ratio": cfg.downsample_ratio, "n_train": n_train,
        "best_epoch": hist.best_epoch, "best_val_f1": hist.best_val_f1, **extra,
    }


def train_nam(train: FeatureMatrix, val: FeatureMatrix, cfg: TrainConfig = TrainConfig(),
              arch: NamArch = NamArch()) -> NamModel:
    """Downsample, standardize and train a NAM on raw feature matrices."""
    ds, scaler, tr, va = _prepare(train, val, cfg)
    model = NamModel.init(tr.M, arch, substream(cfg.seed, "init"), scaler)
    model, hist = fit_model(model, tr.rows, tr.labels, va.rows, va.labels, cfg, substream(cfg.seed, "batches"))
    model.meta = _meta(cfg, hist, len(ds), hidden=arch.hidden, activation=arch.activation)
    log.info("NAM h=%d %s: best val F1 %.4f at epoch %d", arch.hidden, arch.activation,
             hist.best_val_f1, hist.best_epoch)
    return model


def train_lr(train: FeatureMatrix, val: FeatureMatrix, cfg: TrainConfig = TrainConfig(), l2: float = 0.01):
    ds, scaler, tr, va = _prepare(train, val, cfg)
    model = LogisticModel.init(tr.M, l2, substream(cfg.seed, "init"), scaler)
    model, hist = fit_model(model, tr.rows, tr.labels, va.rows, va.labels, cfg, substream(cfg.seed, "batches"))
    model.meta = _meta(cfg, hist, len(ds), l2=l2)
    return model


def train_dnn(train: FeatureMatrix, val: FeatureMatrix, cfg: TrainConfig = TrainConfig(),
              hidden: int = 100, activation: str = RELU):
    ds, scaler, tr, va = _prepare(train, val, cfg)
    model = MlpModel.init(tr.M, hidden, activation, substream(cfg.seed, "init"), scaler)
    model, hist = fit_model(model, tr.rows, tr.labels, va.rows, va.labels, cfg, substream(cfg.seed, "batches"))
    model.meta = _meta(cfg, hist, len(ds), hidden=hidden, activation=activation)
    return model


def validation_f1(model, val: FeatureMatrix) -> float:
    return f1_weighted(model.predict_proba(model.scaler.transform(val.rows)), val.labels)


@dataclass
class GridRow:
    label: str
    params: dict
    val_f1: float
    best_epoch: int

    def csv_row(self) -> str:
        return f"{self.label},{format(self.val_f1, '.17g')},{self.best_epoch}"


def _select(candidates: Sequence, train_one: Callable, sort_key: Callable, describe: Callable, val):
    if not candidates:
        raise ValueError("empty hyperparameter space")
    rows, models = [], []
    for cand in candidates:
        model = train_one(cand)
        f1 = validation_f1(model, val)
        rows.append(GridRow(describe(cand), {"candidate": cand}, f1, int(model.meta.get("best_epoch", 0))))
        models.append(model)
    # Highest F1 wins; ties fall back to the candidate's own preference order.
    best = min(range(len(candidates)), key=lambda i: (-rows[i].val_f1, sort_key(candidates[i])))
    return candidates[best], models[best], rows


def nam_space(hidden=(10, 50, 100, 200), activations=(RELU, EXU), cfg: TrainConfig = TrainConfig()):
    return [(NamArch(h, a), cfg) for h in hidden for a in activations]


def grid_search(space: Sequence[tuple[NamArch, TrainConfig]], train: FeatureMatrix, val: FeatureMatrix):
    """Train every ``(arch, cfg)`` candidate and keep the best validation F1.

    Ties prefer the narrower network, then ReLU over ExU. Returns
    ``((arch, cfg), model, report_rows)``.
    """
    act_rank = {RELU: 0, EXU: 1}
    return _select(
        list(space),
        lambda c: train_nam(train, val, c[1], c[0]),
        lambda c: (c[0].hidden, act_rank[c[0].activation]),
        lambda c: f"nam_h{c[0].hidden}_{c[0].activation}",
        val,
    )


def grid_search_lr(l2_grid: Sequence[float], train, val, cfg: TrainConfig = TrainConfig()):
    # Stronger regularization first on ties.
    return _select(list(l2_grid), lambda l2: train_lr(train, val, cfg, l2), lambda l2: -l2,
                   lambda l2: f"lr_l2_{l2:g}", val)


def grid_search_dnn(space: Sequence[tuple[int, str]], train, val, cfg: TrainConfig = TrainConfig()):
    act_rank = {RELU: 0, LEAKY_RELU: 1}
    return _select(list(space), lambda c: train_dnn(train, val, cfg, c[0], c[1]),
                   lambda c: (c[0], act_rank[c[1]]), lambda c: f"dnn_h{c[0]}_{c[1]}", val)
