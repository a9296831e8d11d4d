"""Sign partition of R^n induced by an involutory matrix, and what it enables.

An involutory A != I splits R^n into fixed points S0 and two half-domains
S+/S- swapped by A. Membership runs over the -1-eigenvalue rows of P^-1 in
reverse order; the canonical half S0 ∪ S+ (the principal domain, PID) is
where reparameterized models are evaluated. Affine maps T(X) = AX + mu with
A mu = -mu reduce to the linear case after shifting the origin by mu/2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .linalg import (
    InvolutoryDiagonalization,
    NotInvolutoryError,
    as_matrix,
    as_vector,
    check_involutory,
    diagonalize_involutory,
)

ZERO_BAND = 1e-9  # |dot| below this is treated as exactly zero in membership


class IncompatibleOffsetError(ValueError):
    """Affine offset fails A @ mu == -mu."""


class PartitionLabel(Enum):
    S0 = "S0"
    SPLUS = "S+"
    SMINUS = "S-"


@dataclass(frozen=True, eq=False)
class InvolutorySpec:
    """Validated involutory transformation with parity and optional offset."""

    A: np.ndarray
    parity: int
    mu: np.ndarray | None
    diag: InvolutoryDiagonalization

    @property
    def n(self) -> int:
        return self.diag.n

    @property
    def shift(self) -> np.ndarray | None:
        return None if self.mu is None else self.mu / 2.0


def involutory_spec(a, parity: int, mu=None) -> InvolutorySpec:
    a = as_matrix(a)
    if parity not in (1, -1):
        raise ValueError(f"parity must be +1 or -1, got {parity}")
    diag = diagonalize_involutory(a)  # also rejects non-involutory and A == I
    offset = None
    if mu is not None:
        offset = as_vector(mu)
        if offset.shape[0] != a.shape[0]:
            raise ValueError("offset length must match matrix dimension")
        if float(np.max(np.abs(a @ offset + offset))) > 1e-8:
            raise IncompatibleOffsetError("offset must satisfy A @ mu == -mu")
    return InvolutorySpec(A=a.copy(), parity=int(parity), mu=offset, diag=diag)


def affine_to_linear(a, mu) -> tuple[np.ndarray, np.ndarray]:
    """Reduce T(X) = A X + mu to a linear map in coordinates X' = X - mu/2."""
    a = as_matrix(a)
    if not check_involutory(a):
        raise NotInvolutoryError("matrix is not involutory to tolerance 1e-8")
    mu = as_vector(mu)
    if float(np.max(np.abs(a @ mu + mu))) > 1e-8:
        raise IncompatibleOffsetError("offset must satisfy A @ mu == -mu")
    return a, mu / 2.0


def vector_in_pid(v, pinv, gamma: int, n: int) -> bool:
    """Membership of v in S0 ∪ S+ via the reverse row scan of P^-1.

    Rows n, n-1, ..., n-gamma+1 (1-indexed) are the -1-eigenvalue coordinates;
    the first dot product outside the zero band decides the half-domain, and a
    completed scan means v is a fixed point.
    """
    v = as_vector(v)
    pinv = as_matrix(pinv)
    if pinv.shape != (n, n) or v.shape[0] != n:
        raise ValueError(f"shape mismatch: Pinv {pinv.shape}, v {v.shape}, n={n}")
    for i in range(n - 1, n - 1 - gamma, -1):
        e = float(pinv[i] @ v)
        if e > ZERO_BAND:
            return True
        if e < -ZERO_BAND:
            return False
    return True


def _scan(v: np.ndarray, spec: InvolutorySpec) -> tuple[PartitionLabel, bool]:
    """Label v and report whether a zero-band row was skipped before deciding."""
    u = v if spec.shift is None else v - spec.shift
    pinv = spec.diag.Pinv
    n, gamma = spec.diag.n, spec.diag.gamma
    skipped = False
    for i in range(n - 1, n - 1 - gamma, -1):
        e = float(pinv[i] @ u)
        if e > ZERO_BAND:
            return PartitionLabel.SPLUS, skipped
        if e < -ZERO_BAND:
            return PartitionLabel.SMINUS, skipped
        skipped = True
    return PartitionLabel.S0, False


def classify(v, spec: InvolutorySpec) -> PartitionLabel:
    return _scan(as_vector(v), spec)[0]


def _apply(spec: InvolutorySpec, x: np.ndarray) -> np.ndarray:
    """Image of x under the (possibly affine) transformation."""
    if spec.shift is None:
        return spec.A @ x
    return spec.A @ (x - spec.shift) + spec.shift


def reparam_point(x, spec: InvolutorySpec) -> tuple[np.ndarray, int]:
    """Map x into the principal domain; the sign is the parity if it moved."""
    x = as_vector(x)
    if classify(x, spec) is PartitionLabel.SMINUS:
        return _apply(spec, x), spec.parity
    return x.copy(), 1


def reparam_dataset(x_rows, targets, spec: InvolutorySpec) -> tuple[np.ndarray, np.ndarray]:
    """Eagerly relocate S- samples to the principal domain (one pass)."""
    xs = np.atleast_2d(np.asarray(x_rows, dtype=float))
    ys = np.asarray(targets, dtype=float)
    if xs.shape[0] != ys.shape[0]:
        raise ValueError("len(X) must equal len(y)")
    out_x = xs.copy()
    out_y = ys.copy()
    for i in range(xs.shape[0]):
        xi, sign = reparam_point(xs[i], spec)
        out_x[i] = xi
        out_y[i] = sign * ys[i]
    return out_x, out_y


@dataclass(frozen=True)
class Block:
    dims: tuple[int, ...]
    spec: InvolutorySpec


@dataclass(frozen=True)
class BlockInvarianceSpec:
    blocks: tuple[Block, ...]


def block_spec(blocks: Sequence[tuple[Sequence[int], InvolutorySpec]]) -> BlockInvarianceSpec:
    """Validate disjoint dimension blocks, each with its own involutory spec."""
    seen: set[int] = set()
    out = []
    for dims, spec in blocks:
        dims = tuple(int(d) for d in dims)
        if len(dims) != spec.n:
            raise ValueError(f"block dims {dims} do not match spec dimension {spec.n}")
        if any(d < 0 for d in dims):
            raise ValueError("block dimensions must be non-negative indices")
        if seen & set(dims):
            raise ValueError("block dimension ranges must be pairwise disjoint")
        seen.update(dims)
        out.append(Block(dims=dims, spec=spec))
    return BlockInvarianceSpec(blocks=tuple(out))


def reparam_multi(x, bspec: BlockInvarianceSpec) -> tuple[np.ndarray, int]:
    """Independently reparameterize each block; sign is the parity product."""
    x = as_vector(x)
    out = x.copy()
    sign = 1
    for block in bspec.blocks:
        sub = out[list(block.dims)]
        if classify(sub, block.spec) is PartitionLabel.SMINUS:
            out[list(block.dims)] = _apply(block.spec, sub)
            sign *= block.spec.parity
    return out, sign


def classify_batch(x_rows: np.ndarray, spec: InvolutorySpec) -> np.ndarray:
    """Vectorized labels for rows of X: +1 for S+, -1 for S-, 0 for S0."""
    xs = np.atleast_2d(np.asarray(x_rows, dtype=float))
    u = xs if spec.shift is None else xs - spec.shift
    n, gamma = spec.diag.n, spec.diag.gamma
    coords = u @ spec.diag.Pinv.T
    # columns in scan order: rows n-1 down to n-gamma of P^-1
    sub = coords[:, : n - gamma - 1 : -1] if gamma < n else coords[:, ::-1]
    decisive = np.abs(sub) > ZERO_BAND
    has = decisive.any(axis=1)
    first = np.argmax(decisive, axis=1)
    vals = sub[np.arange(sub.shape[0]), first]
    return np.where(has, np.sign(vals), 0.0).astype(int)


def reparam_batch(x_rows: np.ndarray, spec: InvolutorySpec) -> tuple[np.ndarray, np.ndarray]:
    """Batched reparam_point: returns relocated rows and per-row signs."""
    xs = np.atleast_2d(np.asarray(x_rows, dtype=float))
    labels = classify_batch(xs, spec)
    neg = labels == -1
    out = xs.copy()
    if neg.any():
        if spec.shift is None:
            out[neg] = xs[neg] @ spec.A.T
        else:
            out[neg] = (xs[neg] - spec.shift) @ spec.A.T + spec.shift
    signs = np.where(neg, float(spec.parity), 1.0)
    return out, signs


def reparam_multi_batch(x_rows: np.ndarray, bspec: BlockInvarianceSpec) -> tuple[np.ndarray, np.ndarray]:
    xs = np.atleast_2d(np.asarray(x_rows, dtype=float))
    out = xs.copy()
    signs = np.ones(xs.shape[0])
    for block in bspec.blocks:
        cols = list(block.dims)
        sub, s = reparam_batch(out[:, cols], block.spec)
        out[:, cols] = sub
        signs *= s
    return out, signs


def wrap_inference(
    model: Callable[[np.ndarray], float],
    spec: InvolutorySpec | BlockInvarianceSpec,
) -> Callable[[np.ndarray], float]:
    """Evaluator g(x) = sign * model(x') with (x', sign) the reparameterization.

    g satisfies g(Ax) = p g(x) bitwise whenever x -> Ax is numerically exact
    (sign flips, permutations), and to ~1e-10 for general involutory A.
    """
    if isinstance(spec, BlockInvarianceSpec):
        def g_multi(x):
            x2, sign = reparam_multi(x, spec)
            return sign * model(x2)

        return g_multi

    def g(x):
        x2, sign = reparam_point(x, spec)
        return sign * model(x2)

    return g


class WrappedGradient:
    """Input-gradient evaluator of the reparameterized model.

    For x in S- this is sign * A^T grad(Ax); elsewhere the raw gradient.
    Evaluations that skip a zero-band membership row before deciding sit
    within noise of a partition boundary and are tallied in boundary_hits
    (the one-sided reparameterized gradient is used there).
    """

    def __init__(self, grad_fn, spec):
        self._grad_fn = grad_fn
        self._spec = spec
        self.boundary_hits = 0

    def __call__(self, x) -> np.ndarray:
        x = as_vector(x)
        if isinstance(self._spec, BlockInvarianceSpec):
            return self._call_multi(x)
        spec = self._spec
        label, skipped = _scan(x, spec)
        if skipped:
            self.boundary_hits += 1
        if label is PartitionLabel.SMINUS:
            return spec.parity * (spec.A.T @ self._grad_fn(_apply(spec, x)))
        return np.asarray(self._grad_fn(x), dtype=float)

    def _call_multi(self, x: np.ndarray) -> np.ndarray:
        out = x.copy()
        sign = 1
        flipped: list[Block] = []
        for block in self._spec.blocks:
            sub = out[list(block.dims)]
            label, skipped = _scan(sub, block.spec)
            if skipped:
                self.boundary_hits += 1
            if label is PartitionLabel.SMINUS:
                out[list(block.dims)] = _apply(block.spec, sub)
                sign *= block.spec.parity
                flipped.append(block)
        grad = sign * np.asarray(self._grad_fn(out), dtype=float)
        for block in flipped:
            grad[list(block.dims)] = block.spec.A.T @ grad[list(block.dims)]
        return grad


def wrap_input_gradient(grad_fn, spec) -> WrappedGradient:
    return WrappedGradient(grad_fn, spec)


def blocks_to_json(bspec: BlockInvarianceSpec) -> list[dict]:
    return [dict(dims=list(b.dims), **spec_to_json(b.spec)) for b in bspec.blocks]


def blocks_from_json(docs: Sequence[dict]) -> BlockInvarianceSpec:
    return block_spec([
        (doc["dims"], involutory_spec(doc["A"], int(doc["parity"]), doc.get("mu")))
        for doc in docs
    ])


def spec_to_json(spec: InvolutorySpec) -> dict:
    return {
        "A": spec.A.tolist(),
        "parity": spec.parity,
        "mu": None if spec.mu is None else spec.mu.tolist(),
    }


def spec_from_json(doc: dict) -> InvolutorySpec:
    return involutory_spec(doc["A"], int(doc["parity"]), doc.get("mu"))


def save_spec(spec: InvolutorySpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_json(spec), fh, indent=2)


def load_spec(path) -> InvolutorySpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_json(json.load(fh))
