import numpy as np
import pytest

from cfrcast.dataset import DatasetSplit
from cfrcast.errors import ConfigError, NumericalError
from cfrcast.models import (
    NetworkSpec, TrainConfig, TrainLog, build_classifier, build_predictor, evaluate_loss, fit,
    head_of, predict, prime_output_bias,
)
from cfrcast.nn import ConvLayerSpec, mse_loss

TABLE_I = [
    (2, (3, 10), (1, 1), "tanh"),
    (3, (10, 10), (1, 16), "tanh"),
    (3, (10, 10), (10, 1), "tanh"),
    (2, (10, 3), (1, 64), "tanh"),
    (10, (1, 64), (1, 1), "exponential"),
]


def tiny_split(n_train=24, n_test=8, f=4, t=6, d=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_train + n_test, f, t, 2))
    # a learnable target: magnitude of the latest input sample
    mag = np.hypot(x[:, :, -1, 0], x[:, :, -1, 1])[:, :, None, None] * np.ones((1, 1, 1, d))
    cls = (mag < np.percentile(mag[:n_train], 30)).astype(float)
    return DatasetSplit(x[:n_train], x[n_train:], mag[:n_train], mag[n_train:],
                        cls[:n_train], cls[n_train:], 1.0, 0.5)


def tiny_spec(head="predictor", d=2, t=6):
    act = "exponential" if head == "predictor" else "sigmoid"
    layers = (ConvLayerSpec(2, 3, (3, 2), (1, 1), "tanh"), ConvLayerSpec(3, 2, (3, 2), (1, 2), "tanh"),
              ConvLayerSpec(2, d, (1, t), (1, 1), act, "valid"))
    return NetworkSpec(layers, head, d)


# -- architecture ---------------------------------------------------------------

def test_predictor_matches_table_i():
    spec = build_predictor(10, 64)
    assert len(spec.layers) == 5
    in_ch = 2
    for layer, (out, kernel, dil, act) in zip(spec.layers, TABLE_I):
        assert (layer.in_channels, layer.out_channels, layer.kernel, layer.dilation, layer.activation) == \
            (in_ch, out, kernel, dil, act)
        in_ch = out
    assert [l.time_padding for l in spec.layers] == ["causal"] * 4 + ["valid"]


def test_parameter_count_z():
    # sum over layers of out * in * k_f * k_t + out
    z, in_ch = 0, 2
    for out, (kf, kt), _, _ in TABLE_I:
        z += out * in_ch * kf * kt + out
        in_ch = out
    assert z == 3100
    assert build_predictor(10).n_params == 3100
    assert build_predictor(10).init(0).parameter_vector().size == 3100


def test_paper_shapes():
    x = np.random.default_rng(0).normal(size=(1, 128, 64, 2))
    assert build_predictor(10, 64).init(0).forward(x).shape == (1, 128, 1, 10)
    out = build_classifier(10, 64).init(1).forward(x)
    assert out.shape == (1, 128, 1, 10)
    assert np.all((out >= 0) & (out <= 1))


def test_classifier_shares_hidden_stack():
    p, c = build_predictor(4, 64), build_classifier(4, 64)
    assert p.layers[:4] == c.layers[:4]
    assert c.layers[-1].activation == "sigmoid" and c.layers[-1].kernel == (1, 64)


def test_short_window_rejected_unless_kernel_shrunk():
    with pytest.raises(ConfigError):
        build_predictor(4, 16)
    spec = build_predictor(4, 16, output_kernel_t=16)
    assert spec.layers[-1].kernel == (1, 16)
    assert spec.init(0).forward(np.zeros((2, 32, 16, 2))).shape == (2, 32, 1, 4)


def test_network_spec_validation():
    layers = build_predictor(4).layers
    with pytest.raises(ConfigError):
        NetworkSpec(layers, "classifier", 4)
    with pytest.raises(ConfigError):
        NetworkSpec(layers, "predictor", 5)


def test_zero_classifier_outputs_half():
    net = build_classifier(10, 64).init(0)
    for p in net.params():
        p[...] = 0.0
    out = net.forward(np.random.default_rng(1).normal(size=(2, 16, 64, 2)))
    assert np.all(out == 0.5)


def test_head_ranges_and_predict_purity():
    rng = np.random.default_rng(2)
    x = rng.normal(scale=3, size=(3, 16, 64, 2))
    pred = build_predictor(10, 64).init(3)
    before = pred.parameter_vector()
    a, b = predict(pred, x), predict(pred, x)
    assert np.array_equal(a, b) and np.all(a > 0)
    assert np.array_equal(pred.parameter_vector(), before)
    assert np.array_equal(predict(pred, x[:2]), np.concatenate([predict(pred, x[:1]), predict(pred, x[1:2])]))
    assert head_of(pred) == "predictor"
    assert head_of(build_classifier(10, 64).init(0)) == "classifier"


# -- training -----------------------------------------------------------------------

def test_overfit_single_example():
    sp = tiny_split(n_train=1, n_test=1)
    net = tiny_spec().init(0)
    _, log = fit(net, sp, TrainConfig(batch_size=1, epochs=200, lr=0.003))
    first = evaluate_loss(tiny_spec().init(0), sp.x_train, sp.y_pred_train)
    assert log.train_losses[-1] < 0.1 * first


def test_training_deterministic():
    sp = tiny_split()
    runs = []
    for _ in range(2):
        net, log = fit(tiny_spec().init(5), sp, TrainConfig(batch_size=5, epochs=3, seed=9))
        runs.append((net.parameter_vector(), log.rows))
    assert np.array_equal(runs[0][0], runs[1][0]) and runs[0][1] == runs[1][1]
    net, log = fit(tiny_spec().init(5), sp, TrainConfig(batch_size=5, epochs=3, shuffle=False))
    net2, log2 = fit(tiny_spec().init(5), sp, TrainConfig(batch_size=5, epochs=3, shuffle=False))
    assert log.rows == log2.rows


def test_running_mean_includes_partial_batch():
    sp = tiny_split(n_train=7)
    net = tiny_spec().init(0)
    ref = net.copy()
    _, log = fit(net, sp, TrainConfig(batch_size=4, epochs=1, shuffle=False, lr=1e-12))
    # with a negligible step the epoch mean is the size-weighted mean of batch losses
    l1 = mse_loss(ref.forward(sp.x_train[:4]), sp.y_pred_train[:4])[0]
    l2 = mse_loss(ref.forward(sp.x_train[4:]), sp.y_pred_train[4:])[0]
    assert log.train_losses[0] == pytest.approx((4 * l1 + 3 * l2) / 7, rel=1e-9)


def test_final_test_loss_matches_evaluation():
    sp = tiny_split()
    net, log = fit(tiny_spec().init(1), sp, TrainConfig(batch_size=8, epochs=2))
    assert log.test_losses[-1] == evaluate_loss(net, sp.x_test, sp.y_pred_test)


def test_classifier_training_uses_bce_and_primes_bias():
    sp = tiny_split()
    net = tiny_spec("classifier").init(2)
    prime_output_bias(net, sp.y_cls_train)
    rate = sp.y_cls_train.mean(axis=(0, 1, 2))
    assert np.allclose(1 / (1 + np.exp(-net.layers[-1].bias)), rate)
    net, log = fit(tiny_spec("classifier").init(2), sp, TrainConfig(batch_size=8, epochs=3))
    assert log.train_losses[-1] < log.train_losses[0]
    assert np.all((predict(net, sp.x_test) >= 0) & (predict(net, sp.x_test) <= 1))


def test_fit_rejects_mismatched_shapes():
    sp = tiny_split(d=2)
    with pytest.raises(ConfigError):
        fit(tiny_spec(d=3).init(0), sp, TrainConfig(epochs=1))


def test_fit_raises_on_divergence():
    sp = tiny_split()
    sp.y_pred_train[0, 0, 0, 0] = np.inf
    with pytest.raises(NumericalError):
        fit(tiny_spec().init(0), sp, TrainConfig(batch_size=64, epochs=1))


def test_train_config_validation():
    for kwargs in ({"batch_size": 0}, {"epochs": 0}, {"lr": 0.0}):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.epochs, cfg.lr) == (64, 30, 0.003)


def test_train_log_csv_and_contiguity():
    log = TrainLog()
    log.add(1, 0.5, 0.25)
    log.add(2, 1 / 3, 0.125)
    assert log.to_csv() == "epoch,train_loss,test_loss\n1,0.5,0.25\n2,0.333333333,0.125\n"
    with pytest.raises(ValueError):
        log.add(4, 0.0, 0.0)
