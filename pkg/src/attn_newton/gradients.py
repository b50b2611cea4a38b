"""Gradients of the attention regression loss and of the weight penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .forward import ForwardCache, ParamState, ProblemInstance, forward
from .kron import check_oracle_cap, materialize_kron


@dataclass(frozen=True)
class GradientPair:
    gx: np.ndarray
    gy: np.ndarray

    def __add__(self, other: "GradientPair") -> "GradientPair":
        return GradientPair(self.gx + other.gx, self.gy + other.gy)

    def scaled(self, factor: float) -> "GradientPair":
        return GradientPair(factor * self.gx, factor * self.gy)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.gx, self.gy])

    @property
    def norm_x(self) -> float:
        return float(np.linalg.norm(self.gx))

    @property
    def norm_y(self) -> float:
        return float(np.linalg.norm(self.gy))

    @property
    def norm(self) -> float:
        return float(np.hypot(self.norm_x, self.norm_y))


def softmax_jacobian_rows(f: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row ``j0`` is ``(diag(f_j0) - f_j0 f_j0^T) q_j0`` for every ``j0`` at once."""
    return f * q - np.sum(f * q, axis=1, keepdims=True) * f


def grad_fast(inst: ProblemInstance, p: ParamState, cache: Optional[ForwardCache] = None) -> GradientPair:
    cache = forward(inst, p) if cache is None else cache
    # q[j0] = sum_i0 c[j0, i0] h[:, i0], stored as rows
    q = cache.c @ cache.h.T
    prow = softmax_jacobian_rows(cache.f, q)
    gx = (inst.A1.T @ prow @ inst.A2).reshape(-1)
    q_tilde = cache.f.T @ cache.c
    gy = (inst.A3.T @ q_tilde).reshape(-1)
    return GradientPair(gx, gy)


def grad_naive_x(inst: ProblemInstance, p: ParamState, cache: Optional[ForwardCache], j0: int, i0: int) -> np.ndarray:
    """Per-entry gradient of ``L[j0, i0]`` in ``x`` using a materialized block.

    Entry ``i`` is ``c * (<f ∘ a_i, v> - <f, v> <f, a_i>)`` where ``a_i`` is
    column ``i`` of the ``j0``-th Kronecker block and ``v = h[:, i0]``.
    """
    check_oracle_cap(inst.n, inst.d)
    cache = forward(inst, p) if cache is None else cache
    n = inst.n
    block = materialize_kron(inst.A1, inst.A2)[j0 * n : (j0 + 1) * n]
    f = cache.f[j0]
    v = cache.h[:, i0]
    c = cache.c[j0, i0]
    gamma = f @ v
    out = np.empty(block.shape[1])
    for i in range(block.shape[1]):
        a_i = block[:, i]
        out[i] = c * (np.dot(f * a_i, v) - gamma * np.dot(f, a_i))
    return out


def grad_reg(inst: ProblemInstance, p: ParamState) -> GradientPair:
    """Gradient of ``0.5 ||W A1 X A2^T||^2 + 0.5 ||W A3 Y||^2``."""
    w2 = inst.w**2
    scores = inst.A1 @ p.X @ inst.A2.T
    gx = (inst.A1.T @ (w2[:, None] * scores) @ inst.A2).reshape(-1)
    gy = (inst.A3.T @ (w2[:, None] * (inst.A3 @ p.Y))).reshape(-1)
    return GradientPair(gx, gy)


def grad_total(inst: ProblemInstance, p: ParamState, rho: float = 1.0, cache: Optional[ForwardCache] = None) -> GradientPair:
    g = grad_fast(inst, p, cache)
    if rho == 0:
        return g
    return g + grad_reg(inst, p).scaled(rho)
