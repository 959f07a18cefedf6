"""A small deterministic engine for stacks of dilated 2-D convolutions.

Public tensors use the (batch, frequency, time, channel) layout.  Layers run
channel-first internally; :class:`Network` transposes once at its boundary.
Everything is float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import ConfigError, FormatError, ShapeError

Activation = Literal["tanh", "sigmoid", "exponential", "identity"]
ACTIVATIONS = ("tanh", "sigmoid", "exponential", "identity")
PADDINGS = ("causal", "valid")
BCE_EPS = 1e-12


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]  # (frequency, time)
    dilation: tuple[int, int] = (1, 1)
    activation: Activation = "tanh"
    time_padding: Literal["causal", "valid"] = "causal"

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "dilation", tuple(int(d) for d in self.dilation))
        if self.in_channels < 1 or self.out_channels < 1 or min(self.kernel) < 1:
            raise ConfigError(f"channel and kernel sizes must be >= 1: {self}")
        if min(self.dilation) < 1:
            raise ConfigError(f"dilation must be >= 1: {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.time_padding not in PADDINGS:
            raise ConfigError(f"unknown time padding {self.time_padding!r}")

    @property
    def span(self) -> tuple[int, int]:
        """Extent of the dilated kernel minus one, per axis."""
        return ((self.kernel[0] - 1) * self.dilation[0], (self.kernel[1] - 1) * self.dilation[1])

    @property
    def n_params(self) -> int:
        return self.out_channels * self.in_channels * self.kernel[0] * self.kernel[1] + self.out_channels

    def output_shape(self, n_freq: int, n_time: int) -> tuple[int, int]:
        if self.time_padding == "valid":
            n_out = n_time - self.span[1]
            if n_out < 1:
                raise ShapeError(f"time kernel span {self.span[1] + 1} exceeds input length {n_time}")
            return n_freq, n_out
        return n_freq, n_time


# -- activations --------------------------------------------------------------

def activation_forward(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "sigmoid":
        return expit(x)
    if kind == "exponential":
        return np.exp(x)
    if kind == "identity":
        return x.copy()
    raise ConfigError(f"unknown activation {kind!r}")


def activation_backward(kind: str, y: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Chain ``grad`` through the activation, given its output ``y``."""
    if kind == "tanh":
        return grad * (1.0 - y * y)
    if kind == "sigmoid":
        return grad * (y * (1.0 - y))
    if kind == "exponential":
        return grad * y
    if kind == "identity":
        return grad.copy()
    raise ConfigError(f"unknown activation {kind!r}")


# -- convolution layer ---------------------------------------------------------

@dataclass
class ConvLayer:
    spec: ConvLayerSpec
    weights: np.ndarray  # (out, in, k_f, k_t)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        s = self.spec
        want = (s.out_channels, s.in_channels, *s.kernel)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.shape != want or self.bias.shape != (s.out_channels,):
            raise ShapeError(f"parameter shapes {self.weights.shape}, {self.bias.shape} do not match {s}")

    @classmethod
    def init(cls, spec: ConvLayerSpec, rng: np.random.Generator) -> "ConvLayer":
        """Glorot-uniform weights, zero bias."""
        taps = spec.kernel[0] * spec.kernel[1]
        limit = math.sqrt(6.0 / ((spec.in_channels + spec.out_channels) * taps))
        w = rng.uniform(-limit, limit, size=(spec.out_channels, spec.in_channels, *spec.kernel))
        return cls(spec, w, np.zeros(spec.out_channels))

    def _plan(self, n_time: int) -> tuple[int, int, int, bool]:
        """Return (freq offset, time offset, active time taps, use banded GEMM)."""
        span_f, span_t = self.spec.span
        if self.spec.time_padding == "valid":
            return span_f // 2, span_t, self.spec.kernel[1], False
        # causal taps reaching back past the first sample only ever read zeros
        n_kt = min(self.spec.kernel[1], (n_time - 1) // self.spec.dilation[1] + 1)
        return span_f // 2, 0, n_kt, 8 * n_kt >= n_time

    def forward_cf(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Channel-first forward; returns ``(activated, pre_activation)``."""
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected (B, {self.spec.in_channels}, F, T) input, got {x.shape}")
        _, n_to = self.spec.output_shape(x.shape[2], x.shape[3])
        cf, st, n_kt, banded = self._plan(x.shape[3])
        x = np.ascontiguousarray(x)
        df, dt = self.spec.dilation
        if banded:
            pre = _kernels.toeplitz_forward(x, self.weights, self.bias, df, dt, cf, n_kt)
        else:
            pre = _kernels.direct_forward(x, self.weights, self.bias, df, dt, cf, st, n_kt, n_to)
        return activation_forward(self.spec.activation, pre), pre

    def backward_cf(self, grad_out: np.ndarray, x: np.ndarray, y: np.ndarray, need_input_grad: bool = True):
        """Channel-first backward given cached input ``x`` and output ``y``.

        Returns ``(grad_input, grad_weights, grad_bias)``; ``grad_input`` is
        all zeros when ``need_input_grad`` is false.
        """
        if grad_out.shape != y.shape:
            raise ShapeError(f"gradient shape {grad_out.shape} != output shape {y.shape}")
        gp = np.ascontiguousarray(activation_backward(self.spec.activation, y, grad_out))
        cf, st, n_kt, banded = self._plan(x.shape[3])
        x = np.ascontiguousarray(x)
        df, dt = self.spec.dilation
        if banded:
            return _kernels.toeplitz_backward(gp, x, self.weights, df, dt, cf, n_kt, need_input_grad)
        return _kernels.direct_backward(gp, x, self.weights, df, dt, cf, st, n_kt, need_input_grad)


def _to_cf(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).transpose(0, 3, 1, 2))


def _to_cl(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def conv2d_forward(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Forward one layer on a (B, F, T, C_in) tensor."""
    if x.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {x.shape}")
    y, _ = layer.forward_cf(_to_cf(x))
    return _to_cl(y)


def conv2d_backward(grad_out: np.ndarray, cached_input: np.ndarray, layer: ConvLayer):
    """Return ``(grad_input, grad_weights, grad_bias)`` in (B, F, T, C) layout."""
    x = _to_cf(cached_input)
    y, _ = layer.forward_cf(x)
    g = _to_cf(grad_out)
    if g.shape != y.shape:
        raise ShapeError(f"gradient shape {grad_out.shape} does not match layer output")
    gx, gw, gb = layer.backward_cf(g, x, y)
    return _to_cl(gx), gw, gb


# -- losses ---------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def bce_loss(prob: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> tuple[float, np.ndarray]:
    if prob.shape != target.shape:
        raise ShapeError(f"prediction {prob.shape} vs target {target.shape}")
    p = np.clip(prob, eps, 1.0 - eps)
    value = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    grad = (p - target) / (p * (1.0 - p)) / p.size
    # the clamp is flat outside [eps, 1 - eps]
    grad = np.where((prob < eps) | (prob > 1.0 - eps), 0.0, grad)
    return float(value), grad


# -- optimiser --------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient and state lists differ in length")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# -- network ------------------------------------------------------------------------

@dataclass
class Network:
    """An ordered stack of convolution layers.

    If the final layer leaves more than one time position, only the most
    recent one is kept, giving a (B, F, 1, C_out) output.
    """

    layers: list[ConvLayer] = field(default_factory=list)

    @classmethod
    def init(cls, specs: list[ConvLayerSpec], seed: int) -> "Network":
        check_chain(specs)
        rng = np.random.default_rng(seed)
        return cls([ConvLayer.init(s, rng) for s in specs])

    @property
    def specs(self) -> list[ConvLayerSpec]:
        return [layer.spec for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    @property
    def n_params(self) -> int:
        return sum(s.n_params for s in self.specs)

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_parameter_vector(self, zeta: np.ndarray) -> None:
        if zeta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {zeta.shape}")
        i = 0
        for p in self.params():
            p[...] = zeta[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self) -> "Network":
        return Network([ConvLayer(l.spec, l.weights.copy(), l.bias.copy()) for l in self.layers])

    def _forward_cf(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [x]
        for layer in self.layers:
            y, _ = layer.forward_cf(acts[-1])
            acts.append(y)
        return acts[-1][..., -1:], acts

    def forward(self, x: np.ndarray, *, keep_cache: bool = False):
        if x.ndim != 4 or x.shape[3] != self.layers[0].spec.in_channels:
            raise ShapeError(f"expected (B, F, T, {self.layers[0].spec.in_channels}) input, got {x.shape}")
        out, acts = self._forward_cf(_to_cf(x))
        if keep_cache:
            return _to_cl(out), acts
        return _to_cl(out)

    def backward(self, grad_out: np.ndarray, acts: list[np.ndarray], *,
                 need_input_grad: bool = False) -> tuple[np.ndarray | None, list[np.ndarray]]:
        """Return ``(grad_input, grads)`` with grads ordered like :meth:`params`."""
        g_last = _to_cf(grad_out)
        full = np.zeros_like(acts[-1])
        if g_last.shape[:3] != full.shape[:3] or g_last.shape[3] != 1:
            raise ShapeError(f"gradient shape {grad_out.shape} does not match network output")
        full[..., -1:] = g_last
        g = full
        grads: list[np.ndarray] = []
        for i in range(len(self.layers) - 1, -1, -1):
            g, gw, gb = self.layers[i].backward_cf(g, acts[i], acts[i + 1], i > 0 or need_input_grad)
            grads = [gw, gb] + grads
        return (_to_cl(g) if need_input_grad else None), grads

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Pure forward pass in chunks; chunking does not change any bit."""
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


def check_chain(specs: list[ConvLayerSpec]) -> None:
    if not specs:
        raise ConfigError("network needs at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.out_channels != b.in_channels:
            raise ConfigError(f"channel mismatch between {a} and {b}")


# -- weight file -------------------------------------------------------------------

WEIGHT_MAGIC = b"CNNW"
WEIGHT_VERSION = 1
_LAYER_FMT = "<IIIIIIBB"


def save_weights(net: Network, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHB", WEIGHT_MAGIC, WEIGHT_VERSION, len(net.layers)))
        for layer in net.layers:
            s = layer.spec
            fh.write(struct.pack(_LAYER_FMT, s.in_channels, s.out_channels, *s.kernel, *s.dilation,
                                 ACTIVATIONS.index(s.activation), PADDINGS.index(s.time_padding)))
            fh.write(layer.weights.astype("<f8").tobytes())
            fh.write(layer.bias.astype("<f8").tobytes())


def load_weights(path: str | Path) -> Network:
    data = Path(path).read_bytes()
    head = struct.calcsize("<4sHB")
    if len(data) < head:
        raise FormatError("truncated weight file")
    magic, version, n_layers = struct.unpack_from("<4sHB", data)
    if magic != WEIGHT_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != WEIGHT_VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    pos = head
    layers = []
    for _ in range(n_layers):
        if len(data) < pos + struct.calcsize(_LAYER_FMT):
            raise FormatError("truncated weight file")
        ci, co, kf, kt, df, dt, act, pad = struct.unpack_from(_LAYER_FMT, data, pos)
        pos += struct.calcsize(_LAYER_FMT)
        if act >= len(ACTIVATIONS) or pad >= len(PADDINGS):
            raise FormatError("bad activation or padding code")
        spec = ConvLayerSpec(ci, co, (kf, kt), (df, dt), ACTIVATIONS[act], PADDINGS[pad])
        n_w = co * ci * kf * kt
        end = pos + 8 * (n_w + co)
        if len(data) < end:
            raise FormatError("truncated weight file")
        w = np.frombuffer(data, "<f8", n_w, pos).reshape(co, ci, kf, kt)
        b = np.frombuffer(data, "<f8", co, pos + 8 * n_w)
        layers.append(ConvLayer(spec, w.copy(), b.copy()))
        pos = end
    if pos != len(data):
        raise FormatError("trailing bytes in weight file")
    check_chain([l.spec for l in layers])
    return Network(layers)
