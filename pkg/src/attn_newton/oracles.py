"""Independent reference computations used to check the fast paths.

Nothing here calls :func:`attn_newton.forward.forward` or the gradient and
Hessian code; softmax comes from scipy and the Kronecker product is dense.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import softmax

from .forward import ParamState, ProblemInstance
from .kron import check_oracle_cap
from .seeds import rng_for

FD_STEP_GRAD = 1e-5
FD_STEP_HESS = 1e-4
PINV_RTOL = 1e-10
PLANT_LOSS_TOL = 1e-20
PLANT_GRAD_TOL = 1e-10


def _finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite {what} evaluation")
    return value


def fd_gradient(fun: Callable[[np.ndarray], float], point, step: float = FD_STEP_GRAD) -> np.ndarray:
    """Central differences ``(f(p + h e_k) - f(p - h e_k)) / 2h``."""
    if not step > 0:
        raise ValueError("step must be positive")
    z = np.array(point, dtype=float)
    g = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = step
        up = _finite(fun(z + e), "function")
        dn = _finite(fun(z - e), "function")
        g[k] = (up - dn) / (2.0 * step)
    return g


def fd_hessian(grad: Callable[[np.ndarray], np.ndarray], point, step: float = FD_STEP_HESS) -> np.ndarray:
    """Central differences of a gradient map, symmetrized."""
    if not step > 0:
        raise ValueError("step must be positive")
    z = np.array(point, dtype=float)
    H = np.empty((z.size, z.size))
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = step
        up = _finite(np.asarray(grad(z + e), float), "gradient")
        dn = _finite(np.asarray(grad(z - e), float), "gradient")
        H[:, k] = (up - dn) / (2.0 * step)
    return 0.5 * (H + H.T)


def softmax_rows_direct(inst: ProblemInstance, X) -> np.ndarray:
    """Row softmax of ``A1 X A2^T`` built one Kronecker block at a time."""
    check_oracle_cap(inst.n, inst.d)
    x = np.asarray(X, dtype=float).reshape(-1)
    rows = [softmax(np.kron(inst.A1[j0], inst.A2) @ x) for j0 in range(inst.n)]
    return np.array(rows)


def loss_direct(inst: ProblemInstance, p: ParamState) -> float:
    """Scalar-loop loss: ``0.5 sum (<f_j0, A3 Y[:, i0]> - B[j0, i0])^2``."""
    f = softmax_rows_direct(inst, p.X)
    total = 0.0
    for j0 in range(inst.n):
        for i0 in range(inst.d):
            r = np.dot(f[j0], inst.A3 @ p.Y[:, i0]) - inst.B[j0, i0]
            total += 0.5 * r * r
    return float(total)


def regularizer_direct(inst: ProblemInstance, p: ParamState) -> float:
    check_oracle_cap(inst.n, inst.d)
    A = np.kron(inst.A1, inst.A2)
    wx = np.kron(np.diag(inst.w), np.eye(inst.n)) @ A @ p.X.reshape(-1)
    wy = np.diag(inst.w) @ inst.A3 @ p.Y
    return 0.5 * float(wx @ wx + np.sum(wy * wy))


def loss_flat(inst: ProblemInstance, rho: float = 0.0) -> Callable[[np.ndarray], float]:
    d = inst.d

    def fun(z):
        p = ParamState.from_flat(z, d)
        value = loss_direct(inst, p)
        return value + rho * regularizer_direct(inst, p) if rho else value

    return fun


def y_least_squares(inst: ProblemInstance, X) -> np.ndarray:
    """Minimizer of ``||f(X) A3 Y - B||_F`` over ``Y`` via the ``d x d`` normal equations."""
    f = softmax(inst.A1 @ np.asarray(X, float) @ inst.A2.T, axis=1)
    M = f @ inst.A3
    K = M.T @ M
    return np.linalg.pinv(K, rcond=PINV_RTOL, hermitian=True) @ (M.T @ inst.B)


def _scale_to_norm(M: np.ndarray, target: float) -> np.ndarray:
    norm = np.linalg.norm(M, 2)
    return M if norm == 0 else M * (target / norm)


def random_factors(rng: np.random.Generator, n: int, d: int, R: float = 1.0):
    """``A1, A2`` with spectral norm ``min(R, sqrt R)`` so each Kronecker block has norm ``<= R``; ``A3`` with norm ``R``."""
    s12 = min(R, np.sqrt(R))
    A1 = _scale_to_norm(rng.standard_normal((n, d)), s12)
    A2 = _scale_to_norm(rng.standard_normal((n, d)), s12)
    A3 = _scale_to_norm(rng.standard_normal((n, d)), R)
    return A1, A2, A3


def random_instance(rng: np.random.Generator, n: int, d: int, R: float = 1.0, w=None, l: float = 1.0) -> ProblemInstance:
    A1, A2, A3 = random_factors(rng, n, d, R)
    B = rng.uniform(-R, R, size=(n, d))
    return ProblemInstance(A1, A2, A3, B, w=w, R=R, l=l)


def random_state(rng: np.random.Generator, d: int, R: float = 1.0, scale: float = 1.0) -> ParamState:
    """``||vec X|| <= R scale`` and every column of ``Y`` with norm ``<= R scale``."""
    X = rng.standard_normal((d, d))
    X *= R * scale * rng.uniform() ** (1.0 / (d * d)) / max(np.linalg.norm(X), 1e-300)
    Y = rng.standard_normal((d, d))
    Y *= R * scale * rng.uniform(size=d) / np.maximum(np.linalg.norm(Y, axis=0), 1e-300)
    return ParamState(X, Y)


@dataclass(frozen=True)
class PlantedInstance:
    inst: ProblemInstance
    X_star: np.ndarray
    Y_star: np.ndarray

    @property
    def p_star(self) -> ParamState:
        return ParamState(self.X_star, self.Y_star)


def plant(seed: int, n: int, d: int, R: float = 1.0, scale: float = 1.0, w=None, l: float = 1.0) -> PlantedInstance:
    """Random instance with ``B = f(X*) A3 Y*`` so that ``(X*, Y*)`` has zero loss.

    ``Y*`` columns are scaled to norm ``<= min(R, 1) scale`` which keeps every
    entry of ``B`` inside ``[-R, R]``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if scale < 0:
        raise ValueError("scale must be non-negative")
    rng = rng_for(seed, "instance")
    A1, A2, A3 = random_factors(rng, n, d, R)
    p = random_state(rng, d, R, scale)
    Y = p.Y * (min(R, 1.0) / R)
    f = softmax(A1 @ p.X @ A2.T, axis=1)
    B = f @ A3 @ Y
    inst = ProblemInstance(A1, A2, A3, B, w=w, R=R, l=l)
    planted = PlantedInstance(inst, p.X, Y)
    _verify_plant(planted)
    return planted


def _verify_plant(planted: PlantedInstance) -> None:
    from .forward import forward
    from .gradients import grad_fast

    cache = forward(planted.inst, planted.p_star)
    g = grad_fast(planted.inst, planted.p_star, cache)
    if cache.loss > PLANT_LOSS_TOL or g.norm > PLANT_GRAD_TOL:
        raise RuntimeError(f"planted optimum check failed: loss={cache.loss:.3e}, |g|={g.norm:.3e}")
