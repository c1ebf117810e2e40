import math

import numpy as np
import pytest
from helpers import finite_difference_check
from conftest import toy_matrix

from mtnam.errors import TrainingDivergedError
from mtnam.features import FeatureMatrix
from mtnam.nam import (
    EXU,
    LEAKY_RELU,
    RELU,
    Adam,
    FeatureNet,
    LogisticModel,
    MlpModel,
    NamArch,
    NamModel,
    TrainConfig,
    bce_from_logits,
    downsample_nonictal,
    feature_forward,
    fit_model,
    grid_search,
    load_model,
    nam_forward,
    nam_space,
    sigmoid,
    train_dnn,
    train_lr,
    train_nam,
)


def net(w, b, v, c=0.0, act=RELU):
    return FeatureNet(np.atleast_1d(np.asarray(w, float)), np.atleast_1d(np.asarray(b, float)),
                      np.atleast_1d(np.asarray(v, float)), c, act)


# ---------------------------------------------------------------------------
# Forward


def test_zero_net_outputs_zero():
    n = net(np.zeros(5), np.zeros(5), np.zeros(5))
    assert feature_forward(n, 3.7) == 0.0


def test_relu_unit():
    n = net(1, 0, 1)
    assert feature_forward(n, -3) == 0
    assert feature_forward(n, 2) == 2


def test_exu_unit():
    n = net(0, 0, 1, act=EXU)
    assert feature_forward(n, 0.5) == 0.5
    assert feature_forward(n, 3) == 1
    assert feature_forward(n, -1) == 0


def test_nam_forward_examples():
    M, h = 3, 4
    zero = NamModel(np.zeros((M, h)), np.zeros((M, h)), np.zeros((M, h)), np.zeros(M))
    contrib, y = nam_forward(zero, np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(contrib, 0)
    assert y == 0.5
    # Output biases alone give contributions [1, -1, 2].
    biased = NamModel(np.zeros((M, h)), np.zeros((M, h)), np.zeros((M, h)), np.array([1.0, -1.0, 2.0]))
    contrib, y = nam_forward(biased, np.zeros(3))
    np.testing.assert_array_equal(contrib, [1, -1, 2])
    assert y == pytest.approx(0.8807970779778823, abs=1e-15)
    with pytest.raises(ValueError):
        nam_forward(zero, np.zeros(4))


@pytest.mark.parametrize("act", [RELU, EXU])
def test_kernel_matches_feature_forward(act):
    rng = np.random.default_rng(0)
    model = NamModel.init(6, NamArch(7, act), rng)
    model.params["V"][...] = rng.standard_normal((6, 7))
    model.params["C"][...] = rng.standard_normal(6)
    x = rng.standard_normal(6)
    contrib, y = nam_forward(model, x)
    want = [feature_forward(n, x[j]) for j, n in enumerate(model.feature_nets)]
    np.testing.assert_allclose(contrib, want, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(model.contributions(x[None])[0], want, rtol=1e-12, atol=1e-14)
    # Eq. (1) double sum over channels and features equals the dot with ones.
    double = sum(contrib[c * 3 + i] for c in range(2) for i in range(3))
    assert y == pytest.approx(1 / (1 + math.exp(-double)), rel=1e-14)


def test_per_feature_independence():
    rng = np.random.default_rng(1)
    model = NamModel.init(5, NamArch(8), rng)
    x = rng.standard_normal(5)
    base, _ = nam_forward(model, x)
    x2 = x.copy()
    x2[2] += 1.5
    moved, _ = nam_forward(model, x2)
    changed = np.flatnonzero(moved != base)
    assert set(changed) <= {2}


def test_sigmoid_range_and_clamp():
    t = np.linspace(-30, 30, 601)
    s = sigmoid(t)
    assert np.all((s > 0) & (s < 1)) and np.all(np.diff(s) > 0)
    # Clamped at +-500: finite, and the lower tail stays positive.
    assert sigmoid(np.array([-1e4]))[0] == sigmoid(np.array([-500.0]))[0] > 0
    assert sigmoid(np.array([1e4]))[0] == 1.0
    assert bce_from_logits(np.array([1000.0]), np.array([1.0])) == pytest.approx(0.0, abs=1e-300)
    assert math.isfinite(bce_from_logits(np.array([1000.0]), np.array([0.0])))


# ---------------------------------------------------------------------------
# Gradients


@pytest.mark.parametrize("act", [RELU, EXU])
def test_nam_gradient_finite_difference(act):
    rng = np.random.default_rng(5)
    model = NamModel.init(4, NamArch(10, act), rng)
    # A generic point: zero-bias init stacks every ReLU kink at z = 0.
    model.params["B"][...] = rng.normal(0, 0.5, (4, 10))
    model.params["C"][...] = rng.normal(0, 0.1, 4)
    X = rng.standard_normal((32, 4))
    y = (rng.random(32) < 0.5).astype(float)
    err, n = finite_difference_check(model, X, y, rng)
    assert n == 4 * 10 * 3 + 4
    assert err <= 1e-4


def test_lr_gradient_finite_difference():
    rng = np.random.default_rng(6)
    model = LogisticModel(rng.standard_normal(7), 0.3, l2=0.5)
    X = rng.standard_normal((20, 7))
    y = (rng.random(20) < 0.5).astype(float)
    err, _ = finite_difference_check(model, X, y, rng)
    assert err <= 1e-4


@pytest.mark.parametrize("act", [RELU, LEAKY_RELU])
def test_dnn_gradient_finite_difference(act):
    rng = np.random.default_rng(7)
    model = MlpModel.init(5, 12, act, rng)
    model.params["b1"][...] = rng.normal(0, 0.2, 12)
    X = rng.standard_normal((25, 5))
    y = (rng.random(25) < 0.5).astype(float)
    err, n = finite_difference_check(model, X, y, rng)
    assert n == 5 * 12 + 12 + 12 + 1
    assert err <= 1e-4


# ---------------------------------------------------------------------------
# Optimizer


def test_adam_hand_example():
    p = {"x": np.array([1.0])}
    opt = Adam(p, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    opt.step({"x": np.array([2.0])})
    # m = 0.2, v = 0.004; m_hat = 2, v_hat = 4; step = 0.1 * 2 / (2 + 1e-8)
    assert p["x"][0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8), abs=1e-15)
    opt.step({"x": np.array([-1.0])})
    m = 0.9 * 0.2 + 0.1 * -1.0
    v = 0.999 * 0.004 + 0.001 * 1.0
    m_hat, v_hat = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
    want = 1.0 - 0.1 * 2 / (2 + 1e-8) - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p["x"][0] == pytest.approx(want, abs=1e-14)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(downsample_ratio=0.5)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)


# ---------------------------------------------------------------------------
# Downsampling


def fm_with(n_ictal, n_calm):
    labels = np.r_[np.ones(n_ictal), np.zeros(n_calm)].astype(int)
    perm = np.random.default_rng(0).permutation(labels.size)
    labels = labels[perm]
    return FeatureMatrix(np.arange(labels.size, dtype=float)[:, None], labels, np.arange(labels.size, dtype=float))


def test_downsample_ratio():
    out = downsample_nonictal(fm_with(5, 500), 10, 1)
    assert out.labels.sum() == 5 and len(out) == 55
    assert np.all(np.diff(out.window_start_s) > 0)


def test_downsample_no_upsampling():
    out = downsample_nonictal(fm_with(5, 30), 10, 1)
    assert len(out) == 35


def test_downsample_deterministic_and_errors():
    a = downsample_nonictal(fm_with(5, 500), 10, 42)
    b = downsample_nonictal(fm_with(5, 500), 10, 42)
    np.testing.assert_array_equal(a.rows, b.rows)
    with pytest.raises(ValueError):
        downsample_nonictal(fm_with(0, 20), 10, 0)


# ---------------------------------------------------------------------------
# Training


def test_train_toy_separable():
    rng = np.random.default_rng(3)
    n = 600
    labels = (rng.random(n) < 0.5).astype(int)
    x = rng.normal(0, 0.5, n) + 3.0 * labels
    fm = FeatureMatrix(x[:, None], labels, np.arange(n, dtype=float))
    train, val = fm.subset(slice(0, 400)), fm.subset(slice(400, None))
    cfg = TrainConfig(epochs=60, lr=1e-2, downsample_ratio=100, seed=0)
    model = train_nam(train, val, cfg, NamArch(10))
    init = NamModel.init(1, NamArch(10), np.random.default_rng(0), model.scaler)
    z = model.scaler.transform(train.rows)
    assert bce_from_logits(model.logits(z), train.labels) < bce_from_logits(init.logits(z), train.labels)
    acc = np.mean((model.predict_proba(model.scaler.transform(val.rows)) >= 0.5) == val.labels)
    assert acc >= 0.95


def test_zero_epochs_returns_init():
    fm = toy_matrix()
    cfg = TrainConfig(epochs=0, seed=4)
    model = train_nam(fm.subset(slice(0, 300)), fm.subset(slice(300, None)), cfg, NamArch(5))
    from mtnam.rng import substream
    ref = NamModel.init(3, NamArch(5), substream(4, "init"))
    for k in ref.params:
        np.testing.assert_array_equal(model.params[k], ref.params[k])


def test_training_deterministic():
    fm = toy_matrix(seed=2)
    cfg = TrainConfig(epochs=5, seed=9)
    a = train_nam(fm.subset(slice(0, 300)), fm.subset(slice(300, None)), cfg, NamArch(6, EXU))
    b = train_nam(fm.subset(slice(0, 300)), fm.subset(slice(300, None)), cfg, NamArch(6, EXU))
    assert a.digest() == b.digest()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    fm = toy_matrix()
    model = NamModel.init(3, NamArch(4), np.random.default_rng(0))
    model.params["V"][...] = np.nan
    with pytest.raises(TrainingDivergedError):
        fit_model(model, fm.rows, fm.labels, fm.rows, fm.labels, TrainConfig(epochs=2), np.random.default_rng(0))


def test_lr_separable_and_l2_shrinks():
    rng = np.random.default_rng(8)
    n = 400
    labels = (rng.random(n) < 0.5).astype(int)
    X = rng.standard_normal((n, 2)) + np.where(labels[:, None] == 1, 3.0, -3.0)
    fm = FeatureMatrix(X, labels, np.arange(n, dtype=float))
    train, val = fm.subset(slice(0, 300)), fm.subset(slice(300, None))
    cfg = TrainConfig(epochs=80, lr=1e-2, downsample_ratio=100)
    weak = train_lr(train, val, cfg, l2=0.01)
    acc = np.mean((weak.predict_proba(weak.scaler.transform(val.rows)) >= 0.5) == val.labels)
    assert acc == 1.0
    strong = train_lr(train, val, cfg, l2=1e3)
    assert np.linalg.norm(strong.params["w"]) < np.linalg.norm(weak.params["w"])


def test_dnn_trains():
    fm = toy_matrix(seed=4)
    model = train_dnn(fm.subset(slice(0, 300)), fm.subset(slice(300, None)), TrainConfig(epochs=30, lr=1e-2),
                      hidden=16, activation=LEAKY_RELU)
    val = fm.subset(slice(300, None))
    acc = np.mean((model.predict_proba(model.scaler.transform(val.rows)) >= 0.5) == val.labels)
    assert acc >= 0.9


# ---------------------------------------------------------------------------
# Grid search


def test_grid_single_candidate():
    fm = toy_matrix()
    space = nam_space((5,), (RELU,), TrainConfig(epochs=3))
    (arch, _), model, rows = grid_search(space, fm.subset(slice(0, 300)), fm.subset(slice(300, None)))
    assert arch == NamArch(5, RELU)
    assert len(rows) == 1 and rows[0].label == "nam_h5_relu"


def test_grid_prefers_higher_f1():
    fm = toy_matrix(shift=1.5)
    # Zero epochs leaves an untrained candidate, which must lose to a trained one.
    space = [(NamArch(5), TrainConfig(epochs=0)), (NamArch(50), TrainConfig(epochs=40, lr=1e-2))]
    (arch, cfg), _, rows = grid_search(space, fm.subset(slice(0, 300)), fm.subset(slice(300, None)))
    assert rows[1].val_f1 > rows[0].val_f1
    assert arch.hidden == 50 and cfg.epochs == 40


def test_grid_tie_break_smaller_then_relu():
    fm = toy_matrix(shift=6.0)
    space = nam_space((50, 10), (EXU, RELU), TrainConfig(epochs=10, lr=1e-2))
    (arch, _), _, rows = grid_search(space, fm.subset(slice(0, 300)), fm.subset(slice(300, None)))
    assert len(rows) == 4
    assert all(r.val_f1 == 1.0 for r in rows)
    assert arch == NamArch(10, RELU)


# ---------------------------------------------------------------------------
# Persistence


def test_model_files_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fm = toy_matrix()
    nam = train_nam(fm.subset(slice(0, 300)), fm.subset(slice(300, None)), TrainConfig(epochs=2), NamArch(4, EXU))
    lr = LogisticModel(rng.standard_normal(3), 0.5, 0.1, nam.scaler)
    dnn = MlpModel.init(3, 6, LEAKY_RELU, rng, nam.scaler)
    X = rng.standard_normal((10, 3))
    for m, name in ((nam, "nam"), (lr, "lr"), (dnn, "dnn")):
        m.save(tmp_path / f"{name}.model", "hdr")
        back = load_model(tmp_path / f"{name}.model")
        assert type(back) is type(m)
        np.testing.assert_array_equal(back.logits(X), m.logits(X))
        np.testing.assert_array_equal(back.scaler.mean, nam.scaler.mean)
        back.save(tmp_path / f"{name}2.model", "hdr")
        assert (tmp_path / f"{name}2.model").read_bytes() == (tmp_path / f"{name}.model").read_bytes()
    assert load_model(tmp_path / "nam.model").meta["epochs"] == "2"
