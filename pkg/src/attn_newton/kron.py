"""Row-major vec/mat conventions and lazy Kronecker-block operators.

The design matrix ``A = A1 ⊗ A2`` has shape ``(n*n, d*d)``.  Its ``j0``-th
block of ``n`` rows is ``A1[j0] ⊗ A2``; applying that block to ``x = vec(X)``
gives row ``j0`` of ``A1 @ X @ A2.T``.  Nothing in the production path ever
forms the ``n^2 x d^2`` matrix; :func:`materialize_kron` exists only so tests
have something independent to compare against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORACLE_MAX_N = 16
ORACLE_MAX_D = 4


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent."""


class OracleCapError(ValueError):
    """Raised when a dense oracle is asked to build something too large."""


def check_oracle_cap(n: int, d: int, max_n: int = ORACLE_MAX_N, max_d: int = ORACLE_MAX_D) -> None:
    if n > max_n or d > max_d:
        raise OracleCapError(
            f"dense oracle limited to n <= {max_n}, d <= {max_d}; got n={n}, d={d}"
        )


def vec_rowmajor(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {X.shape}")
    return X.reshape(-1).copy()


def mat_rowmajor(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != d * d:
        raise DimensionError(f"expected a vector of length {d * d}, got shape {x.shape}")
    return x.reshape(d, d).copy()


@dataclass(frozen=True)
class KronBlockOperator:
    """The ``n x d^2`` block ``A1[j0] ⊗ A2`` kept in factored form.

    Attributes:
        a1_row: Row ``j0`` of ``A1``, shape ``(d,)``.
        a2: All of ``A2``, shape ``(n, d)``.
        j0: Block index, kept for bookkeeping.
    """

    a1_row: np.ndarray
    a2: np.ndarray
    j0: int = 0

    def __post_init__(self):
        a1_row = np.asarray(self.a1_row, dtype=float)
        a2 = np.asarray(self.a2, dtype=float)
        if a1_row.ndim != 1 or a2.ndim != 2 or a2.shape[1] != a1_row.shape[0]:
            raise DimensionError(
                f"incompatible factors: a1_row {a1_row.shape}, a2 {a2.shape}"
            )
        object.__setattr__(self, "a1_row", a1_row)
        object.__setattr__(self, "a2", a2)

    @classmethod
    def from_factors(cls, A1, A2, j0: int) -> "KronBlockOperator":
        A1 = np.asarray(A1, dtype=float)
        if not 0 <= j0 < A1.shape[0]:
            raise DimensionError(f"block index {j0} out of range for {A1.shape[0]} rows")
        return cls(A1[j0], A2, j0)

    @property
    def n(self) -> int:
        return self.a2.shape[0]

    @property
    def d(self) -> int:
        return self.a2.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.d * self.d)

    def apply(self, x) -> np.ndarray:
        # (a ⊗ A2) vec(X) = A2 @ (X.T @ a)
        X = mat_rowmajor(x, self.d)
        return self.a2 @ (X.T @ self.a1_row)

    def apply_transpose(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise DimensionError(f"expected a vector of length {self.n}, got {v.shape}")
        return np.outer(self.a1_row, self.a2.T @ v).reshape(-1)


def kron_block_apply(op: KronBlockOperator, x) -> np.ndarray:
    return op.apply(x)


def kron_block_apply_transpose(op: KronBlockOperator, v) -> np.ndarray:
    return op.apply_transpose(v)


def kron_block_congruence(a1_row, A2, inner) -> np.ndarray:
    """Return ``(a ⊗ A2)^T inner (a ⊗ A2)`` as ``(a a^T) ⊗ (A2^T inner A2)``.

    Avoids the ``d^2 x n`` intermediate; cost is ``O(n^2 d + n d^2 + d^4)``.
    """
    a = np.asarray(a1_row, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    return np.kron(np.outer(a, a), A2.T @ inner @ A2)


def materialize_kron(A1, A2, *, max_n: int = ORACLE_MAX_N, max_d: int = ORACLE_MAX_D) -> np.ndarray:
    """Dense ``A1 ⊗ A2``; refuses anything above the oracle size cap."""
    A1 = np.asarray(A1, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    if A1.ndim != 2 or A2.ndim != 2:
        raise DimensionError("materialize_kron expects two matrices")
    n = max(A1.shape[0], A2.shape[0])
    d = max(A1.shape[1], A2.shape[1])
    check_oracle_cap(n, d, max_n, max_d)
    return np.kron(A1, A2)
