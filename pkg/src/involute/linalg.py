"""Dense real matrix kernels for small involutory-transformation problems.

Everything works on plain float64 numpy arrays (row-major). Target sizes are
tiny (n <= ~64), so the emphasis is on explicit, checkable constructions: LU
inversion with partial pivoting, and an eigenprojector-based diagonalization
of involutory matrices into D = P^-1 A P = diag(1,...,1,-1,...,-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INVOLUTORY_TOL = 1e-8
GS_DROP_TOL = 1e-9
PIVOT_TOL = 1e-12


class SingularMatrixError(ValueError):
    """LU elimination met a pivot below tolerance."""


class NotInvolutoryError(ValueError):
    """Matrix failed the A @ A == I check."""


class IdentityExcludedError(ValueError):
    """A == I has no -1 eigenvalue and induces no sign partition."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix entries must be finite")
    return m


def as_vector(v) -> np.ndarray:
    x = np.asarray(v, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("vector entries must be finite")
    return x


def _require_square(a: np.ndarray, what: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} requires a square matrix, got {a.shape[0]}x{a.shape[1]}")


def matmul(a, b) -> np.ndarray:
    """Matrix product with an explicit shape report on mismatch."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise ValueError("matmul overflowed to a non-finite result")
    return out


def lu_inverse(a) -> np.ndarray:
    """Invert a square matrix by LU with partial pivoting.

    Raises SingularMatrixError naming the pivot index if elimination meets a
    pivot with magnitude <= 1e-12.
    """
    a = as_matrix(a)
    _require_square(a, "lu_inverse")
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    for k in range(n):
        piv = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[piv, k]) <= PIVOT_TOL:
            raise SingularMatrixError(f"matrix singular to tolerance at pivot {k}")
        if piv != k:
            lu[[k, piv]] = lu[[piv, k]]
            perm[[k, piv]] = perm[[piv, k]]
        lu[k + 1 :, k] /= lu[k, k]
        lu[k + 1 :, k + 1 :] -= np.outer(lu[k + 1 :, k], lu[k, k + 1 :])
    # Solve A X = I column-block-wise: forward (unit lower), then back substitution.
    y = np.eye(n)[perm]
    for i in range(1, n):
        y[i] -= lu[i, :i] @ y[:i]
    x = y
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1 :] @ x[i + 1 :]) / lu[i, i]
    return x


def check_involutory(a, tol: float = INVOLUTORY_TOL) -> bool:
    """True iff ||a @ a - I||_max <= tol."""
    a = as_matrix(a)
    _require_square(a, "check_involutory")
    n = a.shape[0]
    return float(np.max(np.abs(a @ a - np.eye(n)))) <= tol


@dataclass(frozen=True)
class InvolutoryDiagonalization:
    """Similarity transform P^-1 A P = diag(1^(n-gamma), -1^gamma)."""

    n: int
    gamma: int
    P: np.ndarray
    Pinv: np.ndarray

    def d_diagonal(self) -> np.ndarray:
        d = np.ones(self.n)
        if self.gamma:
            d[self.n - self.gamma :] = -1.0
        return d


def _mgs_columns(m: np.ndarray, drop_tol: float = GS_DROP_TOL) -> list[np.ndarray]:
    """Orthonormal basis of the column space via modified Gram-Schmidt.

    Columns whose residual norm falls to <= drop_tol are dropped, which makes
    the sweep rank-revealing for the well-conditioned projectors used here.
    """
    basis: list[np.ndarray] = []
    for j in range(m.shape[1]):
        v = m[:, j].copy()
        for q in basis:
            v -= (q @ v) * q
        norm = float(np.linalg.norm(v))
        if norm > drop_tol:
            basis.append(v / norm)
    return basis


def diagonalize_involutory(a) -> InvolutoryDiagonalization:
    """Diagonalize an involutory matrix via its eigenprojectors.

    Columns of (I+A)/2 span the +1 eigenspace and columns of (I-A)/2 the -1
    eigenspace; Gram-Schmidt on each yields the n-gamma and gamma basis
    vectors assembled as P = [basis+ | basis-]. A == I is rejected because it
    has no -1 eigenvalue (gamma would be 0).
    """
    a = as_matrix(a)
    _require_square(a, "diagonalize_involutory")
    if not check_involutory(a):
        raise NotInvolutoryError("matrix is not involutory to tolerance 1e-8")
    n = a.shape[0]
    eye = np.eye(n)
    if float(np.max(np.abs(a - eye))) <= INVOLUTORY_TOL:
        raise IdentityExcludedError("A == I_n is excluded (no -1 eigenvalue)")
    gamma = int(round((n - float(np.trace(a))) / 2.0))
    basis_plus = _mgs_columns((eye + a) / 2.0)
    basis_minus = _mgs_columns((eye - a) / 2.0)
    if len(basis_plus) != n - gamma or len(basis_minus) != gamma:
        raise ValueError(
            "projector ranks (%d, %d) disagree with trace count gamma=%d"
            % (len(basis_plus), len(basis_minus), gamma)
        )
    p = np.column_stack(basis_plus + basis_minus)
    return InvolutoryDiagonalization(n=n, gamma=gamma, P=p, Pinv=lu_inverse(p))


def random_involutory(n: int, gamma: int, seed: int) -> np.ndarray:
    """Random involutory matrix with exactly gamma eigenvalues equal to -1."""
    if not 1 <= gamma <= n:
        raise ValueError(f"gamma must satisfy 1 <= gamma <= n, got gamma={gamma}, n={n}")
    if gamma == n:
        # All eigenvalues -1 forces A = -I exactly.
        return -np.eye(n)
    rng = np.random.default_rng(seed)
    while True:
        basis = _mgs_columns(rng.standard_normal((n, n)))
        if len(basis) == n:
            break
    q = np.column_stack(basis)
    d = np.ones(n)
    d[n - gamma :] = -1.0
    return matmul(q * d, lu_inverse(q))


def format_matrix_text(a) -> str:
    """Plain-text format: first line "rows cols", then space-separated rows."""
    a = as_matrix(a)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    for row in a:
        lines.append(" ".join(format(v, ".17g") for v in row))
    return "\n".join(lines) + "\n"


def parse_matrix_text(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty matrix text")
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"matrix header must be 'rows cols', got {lines[0]!r}")
    rows, cols = int(header[0]), int(header[1])
    if len(lines) - 1 != rows:
        raise ValueError(f"expected {rows} matrix rows, got {len(lines) - 1}")
    data = []
    for ln in lines[1:]:
        vals = [float(tok) for tok in ln.split()]
        if len(vals) != cols:
            raise ValueError(f"expected {cols} entries per row, got {len(vals)}")
        data.append(vals)
    return as_matrix(data)
