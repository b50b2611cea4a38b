"""Problem data, parameters and the forward pass of the attention regression loss.

The loss is ``L(X, Y) = 0.5 * ||softmax_rows(A1 X A2^T) A3 Y - B||_F^2`` with an
optional penalty ``0.5 ||W A1 X A2^T||_F^2 + 0.5 ||W A3 Y||_F^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .kron import DimensionError, mat_rowmajor, vec_rowmajor

BOUND_RTOL = 1e-9


class BoundViolation(ValueError):
    """Raised when instance data breaks the norm bound it was declared with."""


@dataclass(frozen=True)
class ProblemInstance:
    """Fixed data of one attention regression problem.

    ``w`` holds the diagonal of the positive weight matrix ``W``.  When
    ``enforce_bounds`` is set, the spectral norms of ``A1``, ``A2``, ``A3``
    and the entries of ``B`` must not exceed ``R``.
    """

    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    B: np.ndarray
    w: Optional[np.ndarray] = None
    R: float = 1.0
    l: float = 1.0
    enforce_bounds: bool = True

    def __post_init__(self):
        arrays = {}
        for name in ("A1", "A2", "A3", "B"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 2:
                raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arrays[name] = arr
        shape = arrays["A1"].shape
        for name, arr in arrays.items():
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
        n = shape[0]
        w = np.ones(n) if self.w is None else np.array(self.w, dtype=float).reshape(-1)
        if w.shape != (n,):
            raise DimensionError(f"w must have length {n}, got {w.shape}")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("weight diagonal must be finite and strictly positive")
        if not self.R > 0 or not self.l > 0:
            raise ValueError("R and l must be positive")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if self.enforce_bounds:
            self.check_bounds()

    @property
    def n(self) -> int:
        return self.A1.shape[0]

    @property
    def d(self) -> int:
        return self.A1.shape[1]

    @property
    def W(self) -> np.ndarray:
        return np.diag(self.w)

    def check_bounds(self) -> None:
        limit = self.R * (1 + BOUND_RTOL)
        for name in ("A1", "A2", "A3"):
            norm = np.linalg.norm(getattr(self, name), 2)
            if norm > limit:
                raise BoundViolation(f"||{name}|| = {norm:.6g} exceeds R = {self.R}")
        bmax = np.max(np.abs(self.B)) if self.B.size else 0.0
        if bmax > limit:
            raise BoundViolation(f"max |B| = {bmax:.6g} exceeds R = {self.R}")

    def with_weights(self, w) -> "ProblemInstance":
        w = np.broadcast_to(np.asarray(w, dtype=float), (self.n,)).copy()
        return replace(self, w=w)

    def with_target(self, B) -> "ProblemInstance":
        return replace(self, B=B)


@dataclass(frozen=True)
class ParamState:
    """The trainable pair ``(X, Y)`` with row-major vectorizations ``x``, ``y``."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim != 2 or X.shape[0] != X.shape[1] or Y.shape != X.shape:
            raise DimensionError(f"X and Y must be equal square matrices: {X.shape}, {Y.shape}")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @classmethod
    def from_vectors(cls, x, y, d: int) -> "ParamState":
        return cls(mat_rowmajor(x, d), mat_rowmajor(y, d))

    @classmethod
    def from_flat(cls, z, d: int) -> "ParamState":
        z = np.asarray(z, dtype=float)
        if z.shape != (2 * d * d,):
            raise DimensionError(f"expected length {2 * d * d}, got {z.shape}")
        return cls.from_vectors(z[: d * d], z[d * d :], d)

    @classmethod
    def zeros(cls, d: int) -> "ParamState":
        return cls(np.zeros((d, d)), np.zeros((d, d)))

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def x(self) -> np.ndarray:
        return vec_rowmajor(self.X)

    @property
    def y(self) -> np.ndarray:
        return vec_rowmajor(self.Y)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def distance(self, other: "ParamState") -> float:
        """``||x - x'||_2 + ||y - y'||_2``, the distance used for convergence radii."""
        return float(np.linalg.norm(self.x - other.x) + np.linalg.norm(self.y - other.y))

    def is_bounded(self, R: float) -> bool:
        col_norms = np.linalg.norm(self.Y, axis=0)
        tol = R * (1 + BOUND_RTOL)
        return bool(np.linalg.norm(self.x) <= tol and np.all(col_norms <= tol))


@dataclass(frozen=True)
class ForwardCache:
    """Everything the gradient and Hessian code reads from one forward pass.

    Row ``j0`` of ``f`` is the softmax vector of query ``j0``; column ``i0`` of
    ``h`` is ``A3 Y[:, i0]``.  ``log_alpha`` is the log of each row's
    normalizer, kept in log form so large logits do not overflow.
    """

    f: np.ndarray
    h: np.ndarray
    c: np.ndarray
    log_alpha: np.ndarray
    loss: float
    scores: np.ndarray = field(repr=False)

    @property
    def gamma(self) -> np.ndarray:
        """``<f_j0, h_i0>`` for every pair, i.e. ``c + B``."""
        return self.f @ self.h


def _check_pair(inst: ProblemInstance, p: ParamState) -> None:
    if p.d != inst.d:
        raise DimensionError(f"parameter dimension {p.d} does not match instance d={inst.d}")


def forward(inst: ProblemInstance, p: ParamState) -> ForwardCache:
    _check_pair(inst, p)
    if not (np.all(np.isfinite(p.X)) and np.all(np.isfinite(p.Y))):
        raise ValueError("parameters contain non-finite entries")
    scores = inst.A1 @ p.X @ inst.A2.T
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("attention scores are not finite")
    row_max = scores.max(axis=1, keepdims=True)
    shifted = np.exp(scores - row_max)
    row_sum = shifted.sum(axis=1, keepdims=True)
    f = shifted / row_sum
    log_alpha = (row_max + np.log(row_sum)).ravel()
    h = inst.A3 @ p.Y
    c = f @ h - inst.B
    loss = 0.5 * float(np.sum(c * c))
    return ForwardCache(f=f, h=h, c=c, log_alpha=log_alpha, loss=loss, scores=scores)


def loss(inst: ProblemInstance, p: ParamState) -> float:
    return forward(inst, p).loss


def regularizer(inst: ProblemInstance, p: ParamState) -> float:
    """``0.5 ||W A1 X A2^T||_F^2 + 0.5 ||W A3 Y||_F^2``."""
    _check_pair(inst, p)
    wx = inst.w[:, None] * (inst.A1 @ p.X @ inst.A2.T)
    wy = inst.w[:, None] * (inst.A3 @ p.Y)
    return 0.5 * float(np.sum(wx * wx) + np.sum(wy * wy))


def loss_reg(inst: ProblemInstance, p: ParamState, rho: float = 1.0) -> float:
    return loss(inst, p) + rho * regularizer(inst, p)


class AlphaDiagnostics(NamedTuple):
    alpha_min: float
    beta_bound_ok: bool


def alpha_diagnostics(inst: ProblemInstance, p: ParamState, cache: Optional[ForwardCache] = None) -> AlphaDiagnostics:
    """Smallest softmax normalizer and whether it clears ``exp(-R^2)``."""
    cache = forward(inst, p) if cache is None else cache
    alpha_min = float(np.exp(cache.log_alpha.min()))
    return AlphaDiagnostics(alpha_min, bool(alpha_min >= np.exp(-inst.R**2)))
