"""Predictor / classifier architectures and the mini-batch training loop."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .dataset import DatasetSplit
from .errors import ConfigError, NumericalError
from .nn import AdamState, ConvLayerSpec, Network, adam_step, bce_loss, check_chain, mse_loss

log = logging.getLogger(__name__)

Head = Literal["predictor", "classifier"]
TABLE_I_OUTPUT_KERNEL_T = 64


def _hidden_layers() -> list[ConvLayerSpec]:
    # (frequency x time) kernels and dilations, tanh throughout
    return [
        ConvLayerSpec(2, 2, (3, 10), (1, 1), "tanh"),
        ConvLayerSpec(2, 3, (10, 10), (1, 16), "tanh"),
        ConvLayerSpec(3, 3, (10, 10), (10, 1), "tanh"),
        ConvLayerSpec(3, 2, (10, 3), (1, 64), "tanh"),
    ]


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[ConvLayerSpec, ...]
    head: Head
    span_d: int

    def __post_init__(self):
        check_chain(list(self.layers))
        want = "exponential" if self.head == "predictor" else "sigmoid"
        if self.layers[-1].activation != want:
            raise ConfigError(f"{self.head} head must end in {want}")
        if self.layers[-1].out_channels != self.span_d:
            raise ConfigError("output channels must equal span_d")

    @property
    def n_params(self) -> int:
        return sum(s.n_params for s in self.layers)

    def init(self, seed: int) -> Network:
        return Network.init(list(self.layers), seed)


def _build(head: Head, span_d: int, t_len: int, output_kernel_t: int) -> NetworkSpec:
    if span_d < 1:
        raise ConfigError("span_d must be >= 1")
    if t_len < output_kernel_t:
        raise ConfigError(f"T={t_len} is shorter than the output kernel length {output_kernel_t}")
    out = ConvLayerSpec(2, span_d, (1, output_kernel_t), (1, 1),
                        "exponential" if head == "predictor" else "sigmoid", "valid")
    return NetworkSpec(tuple(_hidden_layers() + [out]), head, span_d)


def build_predictor(span_d: int = 10, t_len: int = 64, *,
                    output_kernel_t: int = TABLE_I_OUTPUT_KERNEL_T) -> NetworkSpec:
    """Four tanh dilated layers plus an exponential (1 x 64) valid output layer.

    ``output_kernel_t`` shrinks the output kernel for short-window profiles;
    the default is the published architecture.
    """
    return _build("predictor", span_d, t_len, output_kernel_t)


def build_classifier(span_d: int = 10, t_len: int = 64, *,
                     output_kernel_t: int = TABLE_I_OUTPUT_KERNEL_T) -> NetworkSpec:
    """Same hidden stack as the predictor with a sigmoid output layer."""
    return _build("classifier", span_d, t_len, output_kernel_t)


def head_of(net: Network) -> Head:
    act = net.layers[-1].spec.activation
    if act == "exponential":
        return "predictor"
    if act == "sigmoid":
        return "classifier"
    raise ConfigError(f"network output activation {act!r} is neither head")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 30
    lr: float = 0.003
    seed: int = 0
    shuffle: bool = True
    prime_classifier_bias: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def add(self, epoch: int, train_loss: float, test_loss: float) -> None:
        if epoch != len(self.rows) + 1:
            raise ValueError("epochs must be contiguous from 1")
        self.rows.append((epoch, train_loss, test_loss))

    @property
    def train_losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def test_losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_loss"])
        for e, tr, te in self.rows:
            w.writerow([e, f"{tr:.9g}", f"{te:.9g}"])
        return buf.getvalue()


def prime_output_bias(net: Network, y_train: np.ndarray) -> None:
    """Set a sigmoid head's bias to the log-odds of each step's positive rate.

    With rare positives the untrained network otherwise starts at p = 0.5 and
    spends its first updates only learning the base rate.
    """
    rate = np.clip(y_train.mean(axis=(0, 1, 2)), 1e-6, 1.0 - 1e-6)
    net.layers[-1].bias[:] = np.log(rate) - np.log1p(-rate)


def loss_fn(head: Head):
    return mse_loss if head == "predictor" else bce_loss


def predict(net: Network, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    return net.predict(x, batch_size)


def evaluate_loss(net: Network, x: np.ndarray, y: np.ndarray, head: Head | None = None) -> float:
    """Loss over a whole tensor (not a mean of batch means)."""
    value, _ = loss_fn(head or head_of(net))(predict(net, x), y)
    return value


def fit(net: Network, split: DatasetSplit, cfg: TrainConfig, *,
        progress=None) -> tuple[Network, TrainLog]:
    """Train ``net`` in place with Adam; returns the network and per-epoch losses.

    Train loss is the batch-size-weighted running mean over the epoch; test
    loss is computed on the whole test partition after the epoch.  Classifier
    output biases are first set to the training log-odds unless
    ``cfg.prime_classifier_bias`` is off.
    """
    head = head_of(net)
    x_tr, y_tr = split.x_train, split.labels(head, "train")
    x_te, y_te = split.x_test, split.labels(head, "test")
    n = x_tr.shape[0]
    if x_tr.shape[3] != net.layers[0].spec.in_channels or y_tr.shape[3] != net.layers[-1].spec.out_channels:
        raise ConfigError(f"dataset shapes {x_tr.shape}/{y_tr.shape} do not fit the network")
    if x_tr.shape[2] < net.layers[-1].spec.span[1] + 1:
        raise ConfigError(f"dataset T={x_tr.shape[2]} is shorter than the output kernel")
    if head == "classifier" and cfg.prime_classifier_bias:
        prime_output_bias(net, y_tr)
    loss = loss_fn(head)
    params = net.params()
    state = AdamState.for_params(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    tlog = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            out, acts = net.forward(xb, keep_cache=True)
            value, grad = loss(out, yb)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            _, grads = net.backward(grad, acts)
            adam_step(params, grads, state)
            total += value * len(idx)
        train_loss = total / n
        test_loss = evaluate_loss(net, x_te, y_te, head)
        tlog.add(epoch, train_loss, test_loss)
        log.info("epoch %d train %.6g test %.6g", epoch, train_loss, test_loss)
        if progress is not None:
            progress(epoch, train_loss, test_loss)
    return net, tlog
