"""Minimal dense feed-forward engine: activations, backprop, Adam, oracles.

Everything is full-batch numpy. Inputs may be a single vector (n,) or a batch
(m, n); outputs follow. Scalar-output networks additionally expose input
gradients and an analytic forward-over-reverse pass that differentiates the
input-gradient computation itself with respect to the parameters (needed by
losses that contain input gradients).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


def _sigmoid(z):
    t = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def _sigmoid_d(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _sigmoid_d2(z):
    s = _sigmoid(z)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _swish_d(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def _swish_d2(z):
    s = _sigmoid(z)
    sp = s * (1.0 - s)
    return 2.0 * sp + z * sp * (1.0 - 2.0 * s)


@dataclass(frozen=True)
class Activation:
    name: str
    f: Callable
    df: Callable
    d2f: Callable


ACTIVATIONS: dict[str, Activation] = {
    "identity": Activation("identity", lambda z: np.asarray(z, dtype=float),
                           lambda z: np.ones_like(z), lambda z: np.zeros_like(z)),
    "sigmoid": Activation("sigmoid", _sigmoid, _sigmoid_d, _sigmoid_d2),
    "tanh": Activation("tanh", np.tanh,
                       lambda z: 1.0 - np.tanh(z) ** 2,
                       lambda z: -2.0 * np.tanh(z) * (1.0 - np.tanh(z) ** 2)),
    # derivative at exactly 0 is 0 (subgradient convention, measure-zero)
    "relu": Activation("relu", lambda z: np.maximum(z, 0.0),
                       lambda z: (z > 0).astype(float), lambda z: np.zeros_like(z)),
    "swish": Activation("swish", lambda z: z * _sigmoid(z), _swish_d, _swish_d2),
    "softplus": Activation("softplus", lambda z: np.logaddexp(0.0, z),
                           _sigmoid, _sigmoid_d),
    "snake": Activation("snake", lambda z: z + np.sin(z),
                        lambda z: 1.0 + np.cos(z), lambda z: -np.sin(z)),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; known: {sorted(ACTIVATIONS)}") from None


@dataclass
class DenseLayer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: Activation


@dataclass
class MLP:
    layers: list[DenseLayer]

    @property
    def in_size(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_size(self) -> int:
        return self.layers[-1].W.shape[0]


def init_xavier(shape: tuple[int, int], seed) -> np.ndarray:
    """Uniform Glorot draws, reproducible from an int seed or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fan_out, fan_in = shape
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def build_mlp(sizes: Sequence[int], hidden_activation, seed) -> MLP:
    """Dense net over the given widths; hidden layers activated, output linear.

    hidden_activation may be one name for all hidden layers or one per layer.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_hidden = len(sizes) - 2
    if isinstance(hidden_activation, str):
        acts = [hidden_activation] * n_hidden
    else:
        acts = list(hidden_activation)
        if len(acts) != n_hidden:
            raise ValueError(f"need {n_hidden} hidden activations, got {len(acts)}")
    layers = []
    for i in range(len(sizes) - 1):
        name = acts[i] if i < n_hidden else "identity"
        layers.append(DenseLayer(
            W=init_xavier((sizes[i + 1], sizes[i]), rng),
            b=np.zeros(sizes[i + 1]),
            act=get_activation(name),
        ))
    return MLP(layers)


@dataclass
class ForwardCache:
    zs: list
    activations: list  # [input, a1, ..., aL]
    single: bool


def _as_batch(x, width: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != width:
            raise ValueError(f"input width {arr.shape[0]} does not match network input {width}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"input shape {arr.shape} does not match network input width {width}")
    return arr, False


def forward(net: MLP, x) -> tuple[np.ndarray, ForwardCache]:
    a, single = _as_batch(x, net.in_size)
    zs, acts = [], [a]
    for layer in net.layers:
        z = a @ layer.W.T + layer.b
        a = layer.act.f(z)
        zs.append(z)
        acts.append(a)
    y = a[0] if single else a
    return y, ForwardCache(zs, acts, single)


def value(net: MLP, x) -> float:
    """Scalar output of a width-1 network at a single point."""
    y, _ = forward(net, x)
    return float(np.asarray(y).reshape(-1)[0])


def backward_with_input(net: MLP, cache: ForwardCache, d_out):
    """Parameter gradients plus dLoss/dInput from an upstream dLoss/dOutput."""
    d = np.asarray(d_out, dtype=float)
    if cache.single:
        d = d[None, :]
    if d.shape != (cache.activations[-1].shape[0], net.out_size):
        raise ValueError(f"upstream gradient shape {d.shape} does not match cache")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        s = d * layer.act.df(cache.zs[i])
        grads[i] = (s.T @ cache.activations[i], s.sum(axis=0))
        d = s @ layer.W
    return grads, (d[0] if cache.single else d)


def backward(net: MLP, cache: ForwardCache, d_out) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients from an upstream dLoss/dOutput (batch-summed)."""
    return backward_with_input(net, cache, d_out)[0]


def value_and_input_gradient(net: MLP, x) -> tuple[np.ndarray, np.ndarray]:
    """Output and d(output)/d(input) for a scalar-output network."""
    if net.out_size != 1:
        raise ValueError("input gradients are defined for scalar-output networks")
    a, single = _as_batch(x, net.in_size)
    zs = []
    for layer in net.layers:
        z = a @ layer.W.T + layer.b
        zs.append(z)
        a = layer.act.f(z)
    u = np.ones((a.shape[0], 1))
    for i in range(len(net.layers) - 1, -1, -1):
        u = (u * net.layers[i].act.df(zs[i])) @ net.layers[i].W
    if single:
        return a[0, 0], u[0]
    return a[:, 0], u


def input_gradient(net: MLP, x) -> np.ndarray:
    return value_and_input_gradient(net, x)[1]


def directional_param_grads(net: MLP, x, c) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients of sum_i c_i . grad_x net(x_i) (scalar-output nets).

    Forward-over-reverse: the tangent direction c_i rides the forward pass,
    and the reverse pass for grad_theta is differentiated along it, which
    equals grad_theta of the directional input derivative by symmetry of
    mixed partials. Needs twice-differentiable activations.
    """
    if net.out_size != 1:
        raise ValueError("directional_param_grads is defined for scalar-output networks")
    a, single = _as_batch(x, net.in_size)
    ad, _ = _as_batch(c, net.in_size)
    if ad.shape != a.shape:
        raise ValueError("direction batch must match input batch")
    zs, zds, acts, actds = [], [], [a], [ad]
    for layer in net.layers:
        z = a @ layer.W.T + layer.b
        zd = ad @ layer.W.T
        a = layer.act.f(z)
        ad = layer.act.df(z) * zd
        zs.append(z)
        zds.append(zd)
        acts.append(a)
        actds.append(ad)
    m = a.shape[0]
    u = np.ones((m, 1))
    ud = np.zeros((m, 1))
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        df = layer.act.df(zs[i])
        s = u * df
        sd = ud * df + u * layer.act.d2f(zs[i]) * zds[i]
        grads[i] = (sd.T @ acts[i] + s.T @ actds[i], sd.sum(axis=0))
        if i:
            u = s @ layer.W
            ud = sd @ layer.W
    return grads


def mse_loss(pred, target) -> float:
    p = np.asarray(pred, dtype=float).reshape(-1)
    t = np.asarray(target, dtype=float).reshape(-1)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("mse_loss of empty sequences is undefined")
    return float(np.mean((p - t) ** 2))


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient; the universal oracle for gradient code."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


class AdamState:
    """First/second-moment accumulators for a fixed parameter list."""

    def __init__(self, params: Sequence[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns the new parameter arrays."""
    if len(params) != len(state.m) or len(grads) != len(state.m):
        raise ValueError("parameter/gradient lists do not match optimizer state")
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        mhat = state.m[i] / (1.0 - state.beta1 ** t)
        vhat = state.v[i] / (1.0 - state.beta2 ** t)
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out


def get_params(net: MLP) -> list[np.ndarray]:
    out = []
    for layer in net.layers:
        out.append(layer.W)
        out.append(layer.b)
    return out


def set_params(net: MLP, params: Sequence[np.ndarray]) -> None:
    if len(params) != 2 * len(net.layers):
        raise ValueError("parameter list length does not match network")
    for i, layer in enumerate(net.layers):
        layer.W = np.asarray(params[2 * i], dtype=float)
        layer.b = np.asarray(params[2 * i + 1], dtype=float)


def flatten_grads(grads) -> list[np.ndarray]:
    out = []
    for dw, db in grads:
        out.append(dw)
        out.append(db)
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    lr: float = 0.005
    seed: int = 0
    hidden: tuple[int, ...] = (10, 10)
    activation: str = "sigmoid"
    noise_std: float = 0.25

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def mlp_to_json(net: MLP) -> dict:
    return {
        "layers": [
            {"activation": l.act.name, "W": l.W.tolist(), "b": l.b.tolist()}
            for l in net.layers
        ]
    }


def mlp_from_json(doc: dict) -> MLP:
    layers = []
    for spec in doc["layers"]:
        w = np.asarray(spec["W"], dtype=float)
        b = np.asarray(spec["b"], dtype=float)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError("malformed layer arrays")
        layers.append(DenseLayer(W=w, b=b, act=get_activation(spec["activation"])))
    net = MLP(layers)
    for prev, cur in zip(net.layers, net.layers[1:]):
        if cur.W.shape[1] != prev.W.shape[0]:
            raise ValueError("layer widths do not chain")
    return net


def save_mlp(net: MLP, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mlp_to_json(net), fh)


def load_mlp(path) -> MLP:
    with open(path, "r", encoding="utf-8") as fh:
        return mlp_from_json(json.load(fh))
