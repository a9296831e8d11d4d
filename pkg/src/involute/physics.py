"""Hamiltonian learning on the ideal spring, with sign invariance encoded.

A scalar net H(q,p) is trained so its input gradients reproduce observed
phase-space velocities (dH/dp ~ qdot, dH/dq ~ -pdot). The spring Hamiltonian
is even in q and in p independently, so both coordinates carry a sign-flip
invariance; encoding it maps training samples into the positive quadrant
(velocities transform covariantly) and routes every query through the
principal-domain wrapper.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .metrics import RunRecord, violation_metric_batch
from .symmetry import (
    ZERO_BAND,
    Block,
    BlockInvarianceSpec,
    block_spec,
    involutory_spec,
)


@dataclass(frozen=True)
class PhaseSample:
    q: float
    p: float
    qdot: float
    pdot: float


@dataclass(frozen=True)
class SpringConfig:
    k: float = 1.0
    m: float = 1.0
    samples: int = 1000
    noise_std: float = 0.05
    seed: int = 0
    amplitude_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        if self.k <= 0 or self.m <= 0:
            raise ValueError("spring constant and mass must be positive")
        if self.samples < 1:
            raise ValueError("need at least one sample")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi:
            raise ValueError("amplitude_range must be 0 < lo <= hi")


def gen_spring_data(cfg: SpringConfig) -> list[PhaseSample]:
    """Noisy Hamilton's-equations observations on a phase-space annulus."""
    rng = np.random.default_rng(cfg.seed)
    r = rng.uniform(cfg.amplitude_range[0], cfg.amplitude_range[1], cfg.samples)
    th = rng.uniform(0.0, 2.0 * math.pi, cfg.samples)
    q = r * np.cos(th)
    p = r * np.sin(th)
    qdot = p / cfg.m + rng.normal(0.0, cfg.noise_std, cfg.samples)
    pdot = -cfg.k * q + rng.normal(0.0, cfg.noise_std, cfg.samples)
    return [PhaseSample(*vals) for vals in zip(q, p, qdot, pdot)]


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([[s.q, s.p] for s in samples])
    v = np.array([[s.qdot, s.pdot] for s in samples])
    return x, v


def phase_blocks() -> BlockInvarianceSpec:
    """Independent sign-flip invariance of q and of p, both even parity."""
    flip = [[-1.0]]
    return block_spec([
        ((0,), involutory_spec(flip, 1)),
        ((1,), involutory_spec(flip, 1)),
    ])


def reparam_phase_samples(samples, bspec: BlockInvarianceSpec) -> list[PhaseSample]:
    """Relocate samples into the PID cross-product, velocities included.

    For an even Hamiltonian, flipping q negates pdot and flipping p negates
    qdot (Hamilton's equations force the covariant transform).
    """
    for block in bspec.blocks:
        if len(block.dims) != 1 or block.spec.parity != 1:
            raise ValueError("phase reparameterization expects 1-D even-parity blocks")
    out = []
    for s in samples:
        sq = -1.0 if s.q < -ZERO_BAND else 1.0
        sp = -1.0 if s.p < -ZERO_BAND else 1.0
        out.append(PhaseSample(q=sq * s.q, p=sp * s.p, qdot=sp * s.qdot, pdot=sq * s.pdot))
    return out


class TrueSpringHamiltonian:
    """Analytic H(q,p) = k q^2 / 2 + p^2 / (2m); the experiment's ground truth."""

    trainable = False

    def __init__(self, k: float = 1.0, m: float = 1.0):
        self.k = k
        self.m = m

    def values(self, x_rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        return 0.5 * self.k * x[:, 0] ** 2 + x[:, 1] ** 2 / (2.0 * self.m)

    def value(self, x) -> float:
        return float(self.values(np.asarray(x, dtype=float)[None])[0])

    def input_gradients(self, x_rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        return np.column_stack([self.k * x[:, 0], x[:, 1] / self.m])

    def input_gradient(self, x) -> np.ndarray:
        return self.input_gradients(np.asarray(x, dtype=float)[None])[0]


class MLPHamiltonian:
    """Scalar MLP exposing values, input gradients, and the second-order pass."""

    trainable = True

    def __init__(self, net: nn.MLP):
        if net.out_size != 1 or net.in_size != 2:
            raise ValueError("Hamiltonian net must map R^2 -> R")
        self.net = net
        self.evals = 0

    def values(self, x_rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        self.evals += x.shape[0]
        y, _ = nn.forward(self.net, x)
        return y[:, 0]

    def value(self, x) -> float:
        return float(self.values(np.asarray(x, dtype=float)[None])[0])

    def input_gradients(self, x_rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        self.evals += x.shape[0]
        return nn.value_and_input_gradient(self.net, x)[1]

    def input_gradient(self, x) -> np.ndarray:
        return self.input_gradients(np.asarray(x, dtype=float)[None])[0]

    def directional_param_grads(self, x_rows, c_rows):
        return nn.flatten_grads(nn.directional_param_grads(self.net, x_rows, c_rows))

    def params(self):
        return nn.get_params(self.net)

    def set_params(self, params):
        nn.set_params(self.net, params)


class IPTHamiltonian:
    """Batched principal-domain wrapper for per-dimension sign-flip blocks.

    Equivalent to querying through wrap_input_gradient with the same block
    spec (classify for A = [[-1]] flips a coordinate iff it is < -eps0), but
    vectorized so full-batch second-order training stays cheap.
    """

    trainable = True

    def __init__(self, base: MLPHamiltonian, bspec: BlockInvarianceSpec):
        for block in bspec.blocks:
            if (len(block.dims) != 1 or block.spec.parity != 1
                    or abs(block.spec.A[0, 0] + 1.0) > 1e-12 or block.spec.mu is not None):
                raise ValueError("IPTHamiltonian expects 1-D even-parity sign-flip blocks")
        self.base = base
        self.dims = tuple(b.dims[0] for b in bspec.blocks)

    def _flips(self, x: np.ndarray) -> np.ndarray:
        f = np.ones_like(x)
        for d in self.dims:
            f[:, d] = np.where(x[:, d] < -ZERO_BAND, -1.0, 1.0)
        return f

    def values(self, x_rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        return self.base.values(x * self._flips(x))

    def value(self, x) -> float:
        return float(self.values(np.asarray(x, dtype=float)[None])[0])

    def input_gradients(self, x_rows) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        f = self._flips(x)
        return f * self.base.input_gradients(x * f)

    def input_gradient(self, x) -> np.ndarray:
        return self.input_gradients(np.asarray(x, dtype=float)[None])[0]

    def directional_param_grads(self, x_rows, c_rows):
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        c = np.atleast_2d(np.asarray(c_rows, dtype=float))
        f = self._flips(x)
        return self.base.directional_param_grads(x * f, c * f)

    def params(self):
        return self.base.params()

    def set_params(self, params):
        self.base.set_params(params)


def hnn_loss(model, batch):
    """Mean of (dH/dp - qdot)^2 + (dH/dq + pdot)^2 and its parameter grads.

    Parameter gradients differentiate through the input-gradient computation
    (one analytic forward-over-reverse pass); non-trainable models get [].
    """
    if isinstance(batch, tuple):
        x, v = batch
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
    else:
        x, v = samples_to_arrays(batch)
    g = model.input_gradients(x)
    rq = g[:, 1] - v[:, 0]  # dH/dp - qdot
    rp = g[:, 0] + v[:, 1]  # dH/dq + pdot
    loss = float(np.mean(rq * rq + rp * rp))
    if not getattr(model, "trainable", False):
        return loss, []
    m = x.shape[0]
    c = np.column_stack([2.0 * rp / m, 2.0 * rq / m])
    return loss, model.directional_param_grads(x, c)


@dataclass
class RolloutResult:
    t: np.ndarray
    trajectory: np.ndarray  # (steps+1, 2) columns q, p
    energy: np.ndarray
    diverged: bool = False


def rollout(model, z0, dt: float, steps: int) -> RolloutResult:
    """Classical RK4 on zdot = (dH/dp, -dH/dq) with model energy per step."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    def f(z):
        g = model.input_gradient(z)
        return np.array([g[1], -g[0]])

    z = np.asarray(z0, dtype=float).copy()
    traj = [z.copy()]
    energy = [model.value(z)]
    diverged = False
    for _ in range(steps):
        k1 = f(z)
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2)
        k4 = f(z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.linalg.norm(z) > 1e3:
            diverged = True
            break
        traj.append(z.copy())
        energy.append(model.value(z))
    n = len(traj)
    return RolloutResult(t=np.arange(n) * dt, trajectory=np.array(traj),
                         energy=np.array(energy), diverged=diverged)


def analytic_trajectory(k: float, m: float, z0, t: np.ndarray) -> np.ndarray:
    """Exact spring trajectory from z0 at the given times."""
    omega = math.sqrt(k / m)
    q0, p0 = float(z0[0]), float(z0[1])
    q = q0 * np.cos(omega * t) + (p0 / (m * omega)) * np.sin(omega * t)
    p = -q0 * m * omega * np.sin(omega * t) + p0 * np.cos(omega * t)
    return np.column_stack([q, p])


@dataclass
class HnnResult:
    records: list = field(default_factory=list)
    model: object = None
    rollout: RolloutResult = None
    reference: np.ndarray = None
    coord_mse: float = float("nan")
    energy_variance: float = float("nan")
    final_loss: float = float("nan")


@dataclass(frozen=True)
class HnnTrainConfig:
    epochs: int = 1200
    lr: float = 0.005
    seed: int = 0
    hidden: tuple[int, ...] = (16, 16)
    activation: str = "tanh"  # needs a second derivative; relu is excluded


def run_hnn_experiment(cfg: SpringConfig, use_ipt: bool,
                       train: HnnTrainConfig = HnnTrainConfig()) -> HnnResult:
    samples = gen_spring_data(cfg)
    blocks = phase_blocks()
    net = nn.build_mlp((2, *train.hidden, 1), train.activation, train.seed)
    if use_ipt:
        samples = reparam_phase_samples(samples, blocks)
        model = IPTHamiltonian(MLPHamiltonian(net), blocks)
    else:
        model = MLPHamiltonian(net)
    x, v = samples_to_arrays(samples)

    val_rng = np.random.default_rng(cfg.seed + 7919)
    val_pts = val_rng.uniform(-1.5, 1.5, size=(400, 2))
    neg_eye = -np.eye(2)

    params = model.params()
    state = nn.AdamState(params, train.lr)
    records = []
    t0 = time.perf_counter()
    loss = float("nan")
    for epoch in range(1, train.epochs + 1):
        loss, grads = hnn_loss(model, (x, v))
        params = nn.adam_step(state, params, grads)
        model.set_params(params)
        vio = violation_metric_batch(model.values, val_pts, neg_eye, 1)
        records.append(RunRecord(epoch=epoch, train_loss=loss, violation=vio,
                                 trunk_evals=getattr(model, "base", model).evals,
                                 wall_ms=(time.perf_counter() - t0) * 1000.0))
    roll = rollout(model, np.array([1.0, 0.0]), 0.01, 2000)
    ref = analytic_trajectory(cfg.k, cfg.m, (1.0, 0.0), roll.t)
    return HnnResult(
        records=records,
        model=model,
        rollout=roll,
        reference=ref,
        coord_mse=float(np.mean((roll.trajectory - ref) ** 2)),
        energy_variance=float(np.var(roll.energy)),
        final_loss=loss,
    )


def emit_trajectory_csv(result: RolloutResult, path) -> None:
    lines = ["t,q,p,energy"]
    for t, (q, p), e in zip(result.t, result.trajectory, result.energy):
        lines.append(",".join(format(val, ".17g") for val in (t, q, p, e)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
