"""Model families with built-in invariance guarantees, plus cost accounting.

Four regression families share a training interface: a vanilla net (VN), the
hub-layered net (HLN) that superposes trunk activations at X and AX, the
symmetrized-activation net (SAN) that doubles only the first layer, and the
reparameterization net (IPTN) that canonicalizes its input into the principal
domain before a single plain forward pass. A deterministic PassCounter stands
in for wall-clock comparisons: it counts trunk and first-layer evaluations
per inference.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import nn
from .metrics import RunRecord
from .nn import MLP, AdamState, adam_step, build_mlp, get_activation, init_xavier
from .symmetry import (
    BlockInvarianceSpec,
    InvolutorySpec,
    blocks_from_json,
    blocks_to_json,
    reparam_batch,
    reparam_dataset,
    reparam_multi_batch,
    reparam_point,
    spec_from_json,
    spec_to_json,
)


class UnsupportedParityError(ValueError):
    """SAN guarantees invariance only for parity +1."""


@dataclass
class PassCounter:
    trunk_evals: int = 0
    first_layer_evals: int = 0

    def count_trunk(self, n: int = 1) -> None:
        self.trunk_evals += n

    def count_first_layer(self, n: int = 1) -> None:
        self.first_layer_evals += n


def _theta(parity: int) -> float:
    """Heaviside step on the parity: 1 for +1, 0 for -1 (kills the bias)."""
    return 1.0 if parity > 0 else 0.0


def _image_rows(x_rows: np.ndarray, spec: InvolutorySpec) -> np.ndarray:
    """Rows mapped through the (possibly affine) transformation."""
    if spec.shift is None:
        return x_rows @ spec.A.T
    return (x_rows - spec.shift) @ spec.A.T + spec.shift


class VanillaNet:
    kind = "vn"

    def __init__(self, net: MLP):
        self.net = net
        self.counter = PassCounter()

    def predict(self, x_rows, counter: PassCounter | None = None) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        (counter or self.counter).count_trunk(x_rows.shape[0])
        y, _ = nn.forward(self.net, x_rows)
        return y[:, 0]

    def value(self, x, counter: PassCounter | None = None) -> float:
        return float(self.predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :], counter)[0])

    def loss_and_grads(self, x_rows, targets):
        y, cache = nn.forward(self.net, x_rows)
        r = y[:, 0] - targets
        loss = float(np.mean(r * r))
        d_out = (2.0 / r.size) * r[:, None]
        return loss, nn.flatten_grads(nn.backward(self.net, cache, d_out))

    def params(self):
        return nn.get_params(self.net)

    def set_params(self, params):
        nn.set_params(self.net, params)

    def to_json(self) -> dict:
        return {"kind": self.kind, "net": nn.mlp_to_json(self.net)}


class HubNetwork:
    """Trunk evaluated at X and AX; hub H^p = h(X) + p h(AX) feeds the head.

    The head output is w . H^p + theta(p) * 2b, so for odd parity the bias
    drops out of the output entirely and the result is exactly odd.
    """

    kind = "hln"

    def __init__(self, trunk: MLP, head_w: np.ndarray, head_b: float, spec: InvolutorySpec):
        self.trunk = trunk
        self.head_w = np.asarray(head_w, dtype=float)
        self.head_b = float(head_b)
        self.spec = spec
        self.counter = PassCounter()

    def predict(self, x_rows, counter: PassCounter | None = None) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        (counter or self.counter).count_trunk(2 * x_rows.shape[0])
        h1, _ = nn.forward(self.trunk, x_rows)
        h2, _ = nn.forward(self.trunk, _image_rows(x_rows, self.spec))
        hub = h1 + self.spec.parity * h2
        return hub @ self.head_w + _theta(self.spec.parity) * 2.0 * self.head_b

    def value(self, x, counter: PassCounter | None = None) -> float:
        return float(self.predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :], counter)[0])

    def loss_and_grads(self, x_rows, targets):
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        p = self.spec.parity
        h1, c1 = nn.forward(self.trunk, x_rows)
        h2, c2 = nn.forward(self.trunk, _image_rows(x_rows, self.spec))
        hub = h1 + p * h2
        y = hub @ self.head_w + _theta(p) * 2.0 * self.head_b
        r = y - targets
        loss = float(np.mean(r * r))
        dy = (2.0 / r.size) * r
        d_hub = np.outer(dy, self.head_w)
        g1 = nn.backward(self.trunk, c1, d_hub)
        g2 = nn.backward(self.trunk, c2, p * d_hub)
        trunk_grads = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(g1, g2)]
        dw = hub.T @ dy
        db = np.array(_theta(p) * 2.0 * dy.sum())
        return loss, nn.flatten_grads(trunk_grads) + [dw, db]

    def params(self):
        return nn.get_params(self.trunk) + [self.head_w, np.array(self.head_b)]

    def set_params(self, params):
        nn.set_params(self.trunk, params[:-2])
        self.head_w = np.asarray(params[-2], dtype=float)
        self.head_b = float(params[-1])

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "spec": spec_to_json(self.spec),
            "trunk": nn.mlp_to_json(self.trunk),
            "head_w": self.head_w.tolist(),
            "head_b": self.head_b,
        }


class HubMultiNetwork:
    """Hub superposition over all 2^k sign assignments of k flip dimensions.

    Cost grows exponentially with k (this is the point of the comparison with
    the reparameterization wrapper); k is capped at 12.
    """

    kind = "hub-multi"

    def __init__(self, trunk: MLP, head_w: np.ndarray, head_b: float, dims):
        dims = tuple(int(d) for d in dims)
        if len(dims) > 12:
            raise ValueError(f"hub-multi supports at most 12 flip blocks, got {len(dims)}")
        self.trunk = trunk
        self.head_w = np.asarray(head_w, dtype=float)
        self.head_b = float(head_b)
        self.dims = dims
        self.counter = PassCounter()

    def _pattern_inputs(self, x_rows: np.ndarray):
        for signs in itertools.product((1.0, -1.0), repeat=len(self.dims)):
            xt = x_rows.copy()
            for d, s in zip(self.dims, signs):
                xt[:, d] = s * xt[:, d]
            yield xt

    def _hub(self, x_rows: np.ndarray, caches: list | None = None) -> np.ndarray:
        outs = []
        for xt in self._pattern_inputs(x_rows):
            h, cache = nn.forward(self.trunk, xt)
            outs.append(h)
            if caches is not None:
                caches.append(cache)
        # pairwise reduction keeps the sum bitwise invariant under any single
        # block flip (each reduction step swaps two summands at most)
        arr = np.stack(outs)
        while arr.shape[0] > 1:
            arr = arr[0::2] + arr[1::2]
        return arr[0]

    def predict(self, x_rows, counter: PassCounter | None = None) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        (counter or self.counter).count_trunk((2 ** len(self.dims)) * x_rows.shape[0])
        hub = self._hub(x_rows)
        return hub @ self.head_w + (2 ** len(self.dims)) * self.head_b

    def value(self, x, counter: PassCounter | None = None) -> float:
        return float(self.predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :], counter)[0])

    def loss_and_grads(self, x_rows, targets):
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        caches: list = []
        hub = self._hub(x_rows, caches)
        y = hub @ self.head_w + (2 ** len(self.dims)) * self.head_b
        r = y - targets
        loss = float(np.mean(r * r))
        dy = (2.0 / r.size) * r
        d_hub = np.outer(dy, self.head_w)
        trunk_grads = None
        for cache in caches:
            g = nn.backward(self.trunk, cache, d_hub)
            if trunk_grads is None:
                trunk_grads = g
            else:
                trunk_grads = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(trunk_grads, g)]
        dw = hub.T @ dy
        db = np.array((2 ** len(self.dims)) * dy.sum())
        return loss, nn.flatten_grads(trunk_grads) + [dw, db]

    def params(self):
        return nn.get_params(self.trunk) + [self.head_w, np.array(self.head_b)]

    def set_params(self, params):
        nn.set_params(self.trunk, params[:-2])
        self.head_w = np.asarray(params[-2], dtype=float)
        self.head_b = float(params[-1])

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "dims": list(self.dims),
            "trunk": nn.mlp_to_json(self.trunk),
            "head_w": self.head_w.tolist(),
            "head_b": self.head_b,
        }


class SANetwork:
    """First layer uses symmetrized activations s(w.X+b) + s(w.AX+b).

    Only the first layer is evaluated twice; everything deeper runs once, so
    the invariance overhead is independent of depth. Parity is restricted to
    +1 (a(AX) == a(X) cannot produce odd outputs).
    """

    kind = "san"

    def __init__(self, w1: np.ndarray, b1: np.ndarray, act1, rest: MLP, spec: InvolutorySpec):
        if spec.parity != 1:
            raise UnsupportedParityError("symmetrized activations support parity +1 only")
        self.w1 = np.asarray(w1, dtype=float)
        self.b1 = np.asarray(b1, dtype=float)
        self.act1 = get_activation(act1) if isinstance(act1, str) else act1
        self.rest = rest
        self.spec = spec
        self.counter = PassCounter()

    def _first_layer(self, x_rows: np.ndarray):
        z1 = x_rows @ self.w1.T + self.b1
        z2 = _image_rows(x_rows, self.spec) @ self.w1.T + self.b1
        return z1, z2, self.act1.f(z1) + self.act1.f(z2)

    def predict(self, x_rows, counter: PassCounter | None = None) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        c = counter or self.counter
        c.count_first_layer(2 * x_rows.shape[0])
        c.count_trunk(x_rows.shape[0])
        _, _, a1 = self._first_layer(x_rows)
        y, _ = nn.forward(self.rest, a1)
        return y[:, 0]

    def value(self, x, counter: PassCounter | None = None) -> float:
        return float(self.predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :], counter)[0])

    def loss_and_grads(self, x_rows, targets):
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        z1, z2, a1 = self._first_layer(x_rows)
        y, cache = nn.forward(self.rest, a1)
        r = y[:, 0] - targets
        loss = float(np.mean(r * r))
        d_out = (2.0 / r.size) * r[:, None]
        rest_grads, d_a1 = nn.backward_with_input(self.rest, cache, d_out)
        s1 = d_a1 * self.act1.df(z1)
        s2 = d_a1 * self.act1.df(z2)
        dw1 = s1.T @ x_rows + s2.T @ _image_rows(x_rows, self.spec)
        db1 = (s1 + s2).sum(axis=0)
        return loss, [dw1, db1] + nn.flatten_grads(rest_grads)

    def params(self):
        return [self.w1, self.b1] + nn.get_params(self.rest)

    def set_params(self, params):
        self.w1 = np.asarray(params[0], dtype=float)
        self.b1 = np.asarray(params[1], dtype=float)
        nn.set_params(self.rest, params[2:])

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "spec": spec_to_json(self.spec),
            "first": {"activation": self.act1.name, "W": self.w1.tolist(), "b": self.b1.tolist()},
            "rest": nn.mlp_to_json(self.rest),
        }


class IPTNetwork:
    """Plain net behind the principal-domain reparameterization wrapper.

    Training happens on an eagerly reparameterized dataset; inference maps
    each query into the principal domain (one membership scan) and runs the
    trunk exactly once.
    """

    kind = "iptn"

    def __init__(self, net: MLP, spec: InvolutorySpec | BlockInvarianceSpec):
        self.net = net
        self.spec = spec
        self.counter = PassCounter()

    def _reparam_rows(self, x_rows: np.ndarray):
        if isinstance(self.spec, BlockInvarianceSpec):
            return reparam_multi_batch(x_rows, self.spec)
        return reparam_batch(x_rows, self.spec)

    def predict(self, x_rows, counter: PassCounter | None = None) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        (counter or self.counter).count_trunk(x_rows.shape[0])
        x2, signs = self._reparam_rows(x_rows)
        y, _ = nn.forward(self.net, x2)
        return signs * y[:, 0]

    def value(self, x, counter: PassCounter | None = None) -> float:
        return float(self.predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :], counter)[0])

    def loss_and_grads(self, x_rows, targets):
        # the dataset is relocated into the principal domain before training,
        # so the wrapper is the identity here and a plain pass suffices
        y, cache = nn.forward(self.net, x_rows)
        r = y[:, 0] - targets
        loss = float(np.mean(r * r))
        d_out = (2.0 / r.size) * r[:, None]
        return loss, nn.flatten_grads(nn.backward(self.net, cache, d_out))

    def prepare_dataset(self, x_rows, targets):
        if isinstance(self.spec, BlockInvarianceSpec):
            xs = np.atleast_2d(np.asarray(x_rows, dtype=float))
            x2, signs = reparam_multi_batch(xs, self.spec)
            return x2, signs * np.asarray(targets, dtype=float)
        return reparam_dataset(x_rows, targets, self.spec)

    def params(self):
        return nn.get_params(self.net)

    def set_params(self, params):
        nn.set_params(self.net, params)

    def to_json(self) -> dict:
        doc = {"kind": self.kind, "net": nn.mlp_to_json(self.net)}
        if isinstance(self.spec, BlockInvarianceSpec):
            doc["blocks"] = blocks_to_json(self.spec)
        else:
            doc["spec"] = spec_to_json(self.spec)
        return doc


def hln_forward(hub: HubNetwork, x, counter: PassCounter) -> float:
    return hub.value(x, counter)


def san_forward(san: SANetwork, x, counter: PassCounter) -> float:
    return san.value(x, counter)


def iptn_forward(net: MLP, spec, x, counter: PassCounter) -> float:
    counter.count_trunk(1)
    x2, sign = reparam_point(x, spec)
    return sign * nn.value(net, x2)


def hub_multi_forward(trunk: MLP, head: tuple[np.ndarray, float], dims, x,
                      counter: PassCounter) -> float:
    model = HubMultiNetwork(trunk, head[0], head[1], dims)
    return model.value(x, counter)


def build_model(kind: str, spec, input_dim: int, hidden, activation: str, seed,
                san_first_activation: str = "swish"):
    """Construct one of the model families with seeded Xavier weights."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hidden = tuple(int(h) for h in hidden)
    if kind == "vn":
        return VanillaNet(build_mlp((input_dim, *hidden, 1), activation, rng))
    if kind == "iptn":
        return IPTNetwork(build_mlp((input_dim, *hidden, 1), activation, rng), spec)
    if kind == "hln":
        sizes = (input_dim, *hidden)
        trunk = MLP([
            nn.DenseLayer(init_xavier((sizes[i + 1], sizes[i]), rng),
                          np.zeros(sizes[i + 1]), get_activation(activation))
            for i in range(len(sizes) - 1)
        ])
        head_w = init_xavier((1, hidden[-1]), rng)[0]
        return HubNetwork(trunk, head_w, 0.0, spec)
    if kind == "san":
        w1 = init_xavier((hidden[0], input_dim), rng)
        b1 = np.zeros(hidden[0])
        rest = build_mlp((hidden[0], *hidden[1:], 1), activation, rng)
        return SANetwork(w1, b1, san_first_activation, rest, spec)
    if kind == "hub-multi":
        if not isinstance(spec, BlockInvarianceSpec):
            raise ValueError("hub-multi requires a block invariance spec")
        dims = []
        for block in spec.blocks:
            if (len(block.dims) != 1 or block.spec.parity != 1
                    or abs(block.spec.A[0, 0] + 1.0) > 1e-12 or block.spec.mu is not None):
                raise ValueError("hub-multi blocks must be single-dimension sign flips with parity +1")
            dims.append(block.dims[0])
        sizes = (input_dim, *hidden)
        trunk = MLP([
            nn.DenseLayer(init_xavier((sizes[i + 1], sizes[i]), rng),
                          np.zeros(sizes[i + 1]), get_activation(activation))
            for i in range(len(sizes) - 1)
        ])
        head_w = init_xavier((1, hidden[-1]), rng)[0]
        return HubMultiNetwork(trunk, head_w, 0.0, dims)
    raise ValueError(f"unknown model kind {kind!r}")


def model_from_json(doc: dict):
    kind = doc["kind"]
    if kind == "vn":
        return VanillaNet(nn.mlp_from_json(doc["net"]))
    if kind == "hln":
        return HubNetwork(nn.mlp_from_json(doc["trunk"]), np.asarray(doc["head_w"]),
                          doc["head_b"], spec_from_json(doc["spec"]))
    if kind == "san":
        first = doc["first"]
        return SANetwork(np.asarray(first["W"]), np.asarray(first["b"]),
                         first["activation"], nn.mlp_from_json(doc["rest"]),
                         spec_from_json(doc["spec"]))
    if kind == "iptn":
        spec = blocks_from_json(doc["blocks"]) if "blocks" in doc else spec_from_json(doc["spec"])
        return IPTNetwork(nn.mlp_from_json(doc["net"]), spec)
    if kind == "hub-multi":
        return HubMultiNetwork(nn.mlp_from_json(doc["trunk"]), np.asarray(doc["head_w"]),
                               doc["head_b"], doc["dims"])
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(json.load(fh))


def train_regression(model, x_rows, targets, epochs: int, lr: float,
                     violation_hook=None) -> list[RunRecord]:
    """Full-batch Adam on MSE; one RunRecord per epoch."""
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    targets = np.asarray(targets, dtype=float)
    params = model.params()
    state = AdamState(params, lr)
    records = []
    t0 = time.perf_counter()
    for epoch in range(1, epochs + 1):
        loss, grads = model.loss_and_grads(x_rows, targets)
        params = adam_step(state, params, grads)
        model.set_params(params)
        vio = float(violation_hook(model)) if violation_hook is not None else float("nan")
        records.append(RunRecord(
            epoch=epoch,
            train_loss=loss,
            violation=vio,
            trunk_evals=model.counter.trunk_evals,
            wall_ms=(time.perf_counter() - t0) * 1000.0,
        ))
    return records


@dataclass
class UnsafePointReport:
    """Bias values at which a symmetrized activation loses expressivity."""

    kind: str
    parity: int
    found: list[float]
    search_grid: str
    grid_b: np.ndarray = field(repr=False, default=None)
    grid_residual: np.ndarray = field(repr=False, default=None)

    @property
    def unsafe(self) -> bool:
        return len(self.found) > 0


def _default_b_grid() -> np.ndarray:
    pos = np.arange(1, 10001) * 1e-3
    return np.concatenate([-pos[::-1], [0.0], pos])


def _default_z_grid() -> np.ndarray:
    # must extend beyond max |b| so kinks/asymptotics stay inside the window
    # (a piecewise-linear tail looks perfectly odd on any interior window)
    return np.linspace(-12.0, 12.0, 256)


def audit_activation(kind: str, b_grid=None, z_grid=None, tol: float = 1e-6,
                     parity: int = 1) -> UnsafePointReport:
    """Numeric search for biases b* where the parity residual vanishes.

    For parity +1 the residual is max_z |s_b(z) + s_b(-z)| with
    s_b(z) = s(b+z) - s(b) (oddness about b); for parity -1 it is
    max_z |s(b+z) - s(b-z)| (evenness). A coarse grid scan is refined by
    bounded minimization around every local minimum; a b* is reported iff its
    refined residual is <= tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    act = get_activation(kind)
    b = _default_b_grid() if b_grid is None else np.asarray(b_grid, dtype=float)
    z = _default_z_grid() if z_grid is None else np.asarray(z_grid, dtype=float)
    if b.size == 0 or z.size == 0:
        raise ValueError("search grids must be nonempty")

    if parity == 1:
        def residual(bv):
            s = act.f(bv + z) + act.f(bv - z) - 2.0 * act.f(np.asarray(bv, dtype=float))
            return float(np.max(np.abs(s)))
    elif parity == -1:
        def residual(bv):
            s = act.f(bv + z) - act.f(bv - z)
            return float(np.max(np.abs(s)))
    else:
        raise ValueError("parity must be +1 or -1")

    r = np.array([residual(bv) for bv in b])
    found: list[float] = []
    trigger = max(tol, 0.05)
    for i in range(1, b.size - 1):
        if r[i] <= r[i - 1] and r[i] <= r[i + 1] and r[i] < trigger:
            res = minimize_scalar(residual, bounds=(b[i - 1], b[i + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            if residual(float(res.x)) <= tol:
                bstar = float(res.x)
                if not found or abs(bstar - found[-1]) > 1e-6:
                    found.append(bstar)
    grid_desc = (f"b: {b.size} pts in [{b[0]:g}, {b[-1]:g}]; "
                 f"z: {z.size} pts in [{z[0]:g}, {z[-1]:g}]; tol={tol:g}")
    return UnsafePointReport(kind=kind, parity=parity, found=found,
                             search_grid=grid_desc, grid_b=b, grid_residual=r)


def demonstrate_no_expressivity(width: int, seed: int, activation: str = "sigmoid",
                                bias: float = 0.0, input_dim: int = 2,
                                n_points: int = 25) -> tuple[float, float]:
    """Max first-layer weight/input gradients of a SAN under inversion.

    Builds the symmetrized first layer a_i(x) = s(w.x + b) + s(-w.x + b)
    (A = -I) and returns the largest |da/dw| and |da/dx| over nodes and
    random probe points. With sigmoid and b = 0 both are zero: the layer is
    constant and training cannot move it.
    """
    rng = np.random.default_rng(seed)
    act = get_activation(activation)
    w = init_xavier((width, input_dim), rng)
    xs = rng.uniform(-2.0, 2.0, size=(n_points, input_dim))
    max_w_grad = 0.0
    max_x_grad = 0.0
    for x in xs:
        z1 = w @ x + bias
        z2 = -(w @ x) + bias
        factor = act.df(z1) - act.df(z2)  # per-node scalar multiplier
        max_w_grad = max(max_w_grad, float(np.max(np.abs(np.outer(factor, x)))))
        max_x_grad = max(max_x_grad, float(np.max(np.abs(np.outer(factor, np.ones(input_dim)) * w))))
    return max_w_grad, max_x_grad
