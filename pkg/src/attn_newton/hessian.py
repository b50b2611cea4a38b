"""Exact Hessian blocks of the attention regression loss.

Layout follows the row-major convention used everywhere else: the parameter
vector is ``[vec(X); vec(Y)]`` and ``vec`` stacks rows.  Because the loss
couples ``Y`` only column by column, the ``Y``-block of the Hessian is
``K ⊗ I_d`` in this ordering (``K = A3^T f^T f A3``); in column-grouped
ordering it would be ``d`` identical diagonal blocks.  Only ``K`` is stored.

Two presentations exist for every block:

* entry formulas (``hess_*_entry`` and ``*_from_entries``), which are the
  reference and are checked against finite differences;
* factored forms (``hess_xx_block_fast``, ``hess_xy``, ``hess_yy``) built from
  the ``n x n`` curvature matrices, which are what the solver uses.

The ``published_*`` helpers reproduce two factored definitions whose
coefficients disagree with the entry formulas.  They are kept so the verify
report can show the size of that disagreement; nothing else uses them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .forward import ForwardCache, ParamState, ProblemInstance, forward
from .kron import check_oracle_cap, materialize_kron

EIG_ATOL = 1e-8


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def lambda_min(M: np.ndarray) -> float:
    if M.size == 0:
        return float("inf")
    try:
        return float(np.linalg.eigvalsh(_sym(M))[0])
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"symmetric eigensolver failed: {exc}") from exc


def spectral_norm(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def _block(inst: ProblemInstance, j0: int) -> np.ndarray:
    n = inst.n
    return materialize_kron(inst.A1, inst.A2)[j0 * n : (j0 + 1) * n]


# ---------------------------------------------------------------------------
# Entry formulas
# ---------------------------------------------------------------------------


def hess_xx_entry(cache: ForwardCache, inst: ProblemInstance, j0: int, i0: int, i: int, l: int) -> float:
    """``d^2 L[j0, i0] / dx_i dx_l`` from the scalar closed form.

    With ``g_i = <f ∘ a_i, v> - gamma <f, a_i>`` the entry is
    ``g_i g_l + c * (<f ∘ a_i ∘ a_l, v> - gamma <f, a_i ∘ a_l>
    - <f ∘ a_i, v><f, a_l> - <f ∘ a_l, v><f, a_i> + 2 gamma <f, a_i><f, a_l>)``.
    """
    check_oracle_cap(inst.n, inst.d)
    block = _block(inst, j0)
    f = cache.f[j0]
    v = cache.h[:, i0]
    c = cache.c[j0, i0]
    gamma = f @ v
    a_i = block[:, i]
    a_l = block[:, l]
    fa_i_v = np.dot(f * a_i, v)
    f_a_i = np.dot(f, a_i)
    if i == l:
        first = (fa_i_v - gamma * f_a_i) ** 2
        second = (
            np.dot(f * a_i * a_i, v)
            - gamma * np.dot(f, a_i * a_i)
            - 2.0 * fa_i_v * f_a_i
            + 2.0 * f_a_i**2 * gamma
        )
        return float(first + c * second)
    fa_l_v = np.dot(f * a_l, v)
    f_a_l = np.dot(f, a_l)
    first = (fa_i_v - gamma * f_a_i) * (fa_l_v - gamma * f_a_l)
    second = (
        np.dot(f * a_i * a_l, v)
        - gamma * np.dot(f, a_i * a_l)
        - fa_i_v * f_a_l
        - fa_l_v * f_a_i
        + 2.0 * f_a_i * f_a_l * gamma
    )
    return float(first + c * second)


def _xx_entries_pair(f, v, c, block, published: bool = False) -> np.ndarray:
    """All ``(i, l)`` entries for one ``(j0, i0)``, vectorized over ``i, l``."""
    gamma = f @ v
    fav = (f * v) @ block  # <f ∘ a_i, v>
    fa = f @ block  # <f, a_i>
    g = fav - gamma * fa
    triple_v = block.T @ ((f * v)[:, None] * block)  # <f ∘ a_i ∘ a_l, v>
    if published:
        curvature = triple_v * (1.0 - gamma)
    else:
        curvature = triple_v - gamma * (block.T @ (f[:, None] * block))
    cross = np.outer(fav, fa)
    second = curvature - cross - cross.T + 2.0 * gamma * np.outer(fa, fa)
    return np.outer(g, g) + c * second


def hess_xx_from_entries(cache: ForwardCache, inst: ProblemInstance, published: bool = False) -> np.ndarray:
    check_oracle_cap(inst.n, inst.d)
    A = materialize_kron(inst.A1, inst.A2)
    n, d = inst.n, inst.d
    H = np.zeros((d * d, d * d))
    for j0 in range(n):
        block = A[j0 * n : (j0 + 1) * n]
        for i0 in range(d):
            H += _xx_entries_pair(cache.f[j0], cache.h[:, i0], cache.c[j0, i0], block, published)
    return H


def hess_yy_entry(cache: ForwardCache, inst: ProblemInstance, j0: int, i1: int, i2: int) -> float:
    """``d^2 L[j0, i0] / dY[i1, i0] dY[i2, i0]``; the same for every ``i0``."""
    f = cache.f[j0]
    return float(np.dot(inst.A3[:, i1], f) * np.dot(f, inst.A3[:, i2]))


def hess_xy_entry(cache: ForwardCache, inst: ProblemInstance, j0: int, i0: int, i: int, i1: int) -> float:
    """``d^2 L[j0, i0] / dx_i dY[i1, i0]``."""
    check_oracle_cap(inst.n, inst.d)
    a_i = _block(inst, j0)[:, i]
    f = cache.f[j0]
    v = cache.h[:, i0]
    c = cache.c[j0, i0]
    col = inst.A3[:, i1]
    f_col = np.dot(f, col)
    return float(
        f_col * np.dot(f * a_i, v)
        - f_col * np.dot(f, v) * np.dot(f, a_i)
        + c * (np.dot(f * a_i, col) - f_col * np.dot(f, a_i))
    )


def hessian_from_entries(cache: ForwardCache, inst: ProblemInstance) -> np.ndarray:
    """Full ``2d^2 x 2d^2`` Hessian assembled entry by entry (oracle sizes only)."""
    check_oracle_cap(inst.n, inst.d)
    n, d = inst.n, inst.d
    dd = d * d
    A = materialize_kron(inst.A1, inst.A2)
    hxx = hess_xx_from_entries(cache, inst)
    hxy = np.zeros((dd, dd))
    hyy = np.zeros((dd, dd))
    for j0 in range(n):
        block = A[j0 * n : (j0 + 1) * n]
        f = cache.f[j0]
        fa = f @ block
        for i0 in range(d):
            v = cache.h[:, i0]
            c = cache.c[j0, i0]
            gamma = f @ v
            fav = (f * v) @ block
            for i1 in range(d):
                col = inst.A3[:, i1]
                f_col = f @ col
                entries = f_col * fav - f_col * gamma * fa + c * ((f * col) @ block - f_col * fa)
                hxy[:, i1 * d + i0] += entries
                for i2 in range(d):
                    hyy[i1 * d + i0, i2 * d + i0] += hess_yy_entry(cache, inst, j0, i1, i2)
    return np.block([[hxx, hxy], [hxy.T, hyy]])


# ---------------------------------------------------------------------------
# Curvature matrices
# ---------------------------------------------------------------------------


def x_curvature_parts(f, v, c: float) -> dict[str, np.ndarray]:
    """The four ``n x n`` pieces whose sum ``B`` gives ``H[j0,i0] = A_j0^T B A_j0``.

    ``diag``: ``c (diag(f∘v) - gamma diag(f))``; ``rank1``: ``-(gamma + c)``
    times the symmetrized ``(f∘v) f^T``; ``rank2``: ``(2 gamma c + gamma^2) f f^T``;
    ``rank3``: ``(f∘v)(f∘v)^T``.
    """
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    gamma = f @ v
    fv = f * v
    sym = np.outer(fv, f) + np.outer(f, fv)
    return {
        "diag": c * np.diag(fv - gamma * f),
        "rank1": -(gamma + c) * sym,
        "rank2": (2.0 * gamma * c + gamma**2) * np.outer(f, f),
        "rank3": np.outer(fv, fv),
    }


def published_x_curvature_parts(f, v, c: float) -> dict[str, np.ndarray]:
    """Printed variant: ``(1 - gamma) c diag(f∘v)`` and ``-(2 gamma + c)`` coefficients."""
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    gamma = f @ v
    fv = f * v
    sym = np.outer(fv, f) + np.outer(f, fv)
    return {
        "diag": (1.0 - gamma) * c * np.diag(fv),
        "rank1": -(2.0 * gamma + c) * sym,
        "rank2": (2.0 * gamma * c + gamma**2) * np.outer(f, f),
        "rank3": np.outer(fv, fv),
    }


def xy_curvature(f, v, c: float) -> np.ndarray:
    """``M`` with ``d^2 L[j0,i0] / dx dY[:, i0] = A_j0^T M A3``."""
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    gamma = f @ v
    ff = np.outer(f, f)
    return np.outer(f * v, f) - gamma * ff + c * (np.diag(f) - ff)


def published_xy_curvature(f, v, c: float) -> np.ndarray:
    """Printed variant with ``-c diag(f)`` and ``+c f f^T``."""
    f = np.asarray(f, dtype=float)
    v = np.asarray(v, dtype=float)
    gamma = f @ v
    ff = np.outer(f, f)
    return np.outer(f * v, f) - gamma * ff - c * np.diag(f) + c * ff


def b_bar_x(cache: ForwardCache, j0: int) -> np.ndarray:
    """``sum_i0 B[j0, i0]``, the curvature matrix of query row ``j0``."""
    f = cache.f[j0]
    total = np.zeros((f.size, f.size))
    for i0 in range(cache.h.shape[1]):
        total += sum(x_curvature_parts(f, cache.h[:, i0], cache.c[j0, i0]).values())
    return total


# ---------------------------------------------------------------------------
# Fast assembly
# ---------------------------------------------------------------------------


def hess_xx_block_fast(cache: ForwardCache, inst: ProblemInstance) -> np.ndarray:
    """``H_xx = sum_j0 (a_j0 a_j0^T) ⊗ (A2^T Bbar_j0 A2)`` without any ``n x n`` per-row work."""
    F, h, C = cache.f, cache.h, cache.c
    A1, A2 = inst.A1, inst.A2
    d = inst.d
    G = F @ h
    q = C @ h.T
    dvec = F * q - np.sum(C * G, axis=1)[:, None] * F
    U = F * ((G + C) @ h.T)
    s = np.sum(2.0 * G * C + G * G, axis=1)
    a2f = F @ A2
    a2u = U @ A2
    K = np.einsum("jk,kq,kr->jqr", dvec, A2, A2)
    K -= np.einsum("jq,jr->jqr", a2u, a2f)
    K -= np.einsum("jq,jr->jqr", a2f, a2u)
    K += s[:, None, None] * np.einsum("jq,jr->jqr", a2f, a2f)
    Z = np.einsum("jk,kq,ki->jqi", F, A2, h)
    K += np.einsum("jqi,jri->jqr", Z, Z)
    H = np.einsum("jp,jr,jqs->pqrs", A1, A1, K).reshape(d * d, d * d)
    return _sym(H)


def hess_yy(cache: ForwardCache, inst: ProblemInstance) -> np.ndarray:
    """The ``d x d`` block ``A3^T f^T f A3`` shared by every column of ``Y``."""
    FA3 = cache.f @ inst.A3
    return FA3.T @ FA3


def expand_yy(K: np.ndarray) -> np.ndarray:
    """Row-major ``d^2 x d^2`` form of the ``Y``-block: ``K ⊗ I_d``."""
    return np.kron(K, np.eye(K.shape[0]))


def hess_xy_block(cache: ForwardCache, inst: ProblemInstance, j0: int, i0: int) -> np.ndarray:
    """``A_j0^T M A3`` for one pair, shape ``(d^2, d)``; column ``a`` pairs with ``Y[a, i0]``."""
    M = xy_curvature(cache.f[j0], cache.h[:, i0], cache.c[j0, i0])
    N = M @ inst.A3
    return np.kron(inst.A1[j0][:, None], inst.A2.T @ N)


def hess_xy(cache: ForwardCache, inst: ProblemInstance) -> np.ndarray:
    """Full ``H_xy`` of shape ``(d^2, d^2)``; column ``a*d + i0`` is ``Y[a, i0]``."""
    F, h, C = cache.f, cache.h, cache.c
    A1, A2, A3 = inst.A1, inst.A2, inst.A3
    d = inst.d
    G = F @ h
    T = F @ A3
    S = np.einsum("jk,kq,kb->jqb", F, A2, A3)
    out = np.zeros((d * d, d, d))
    for i0 in range(d):
        P = F * h[:, i0][None, :] - (G[:, i0] + C[:, i0])[:, None] * F
        Q = P @ A2
        inner = np.einsum("jq,jb->jqb", Q, T) + C[:, i0][:, None, None] * S
        out[:, :, i0] = np.einsum("jp,jqb->pqb", A1, inner).reshape(d * d, d)
    return out.reshape(d * d, d * d)


# ---------------------------------------------------------------------------
# Bundles, regularization, PSD checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HessianBundle:
    """Exact Hessian blocks at one point.

    ``hyy`` is the shared ``d x d`` block; :meth:`full` expands it.
    """

    hxx: np.ndarray
    hxy: np.ndarray
    hyy: np.ndarray
    reg_applied: bool = False
    rho: float = 0.0

    @property
    def hyy_full(self) -> np.ndarray:
        return expand_yy(self.hyy)

    def full(self) -> np.ndarray:
        H = np.block([[self.hxx, self.hxy], [self.hxy.T, self.hyy_full]])
        return _sym(H)


def exact_hessian(inst: ProblemInstance, p: ParamState, cache: Optional[ForwardCache] = None) -> HessianBundle:
    cache = forward(inst, p) if cache is None else cache
    return HessianBundle(
        hxx=hess_xx_block_fast(cache, inst),
        hxy=hess_xy(cache, inst),
        hyy=hess_yy(cache, inst),
    )


def regularizer_gram_x(inst: ProblemInstance) -> np.ndarray:
    """``A^T (W^2 ⊗ I) A = sum_j0 w_j0^2 (a_j0 a_j0^T) ⊗ (A2^T A2)``."""
    w2 = inst.w**2
    return np.kron(inst.A1.T @ (w2[:, None] * inst.A1), inst.A2.T @ inst.A2)


def regularizer_gram_y(inst: ProblemInstance) -> np.ndarray:
    w2 = inst.w**2
    return inst.A3.T @ (w2[:, None] * inst.A3)


def assemble_regularized(bundle: HessianBundle, inst: ProblemInstance, rho: float = 1.0) -> HessianBundle:
    if not rho > 0:
        raise ValueError("rho must be positive")
    return replace(
        bundle,
        hxx=bundle.hxx + rho * regularizer_gram_x(inst),
        hyy=bundle.hyy + rho * regularizer_gram_y(inst),
        reg_applied=True,
        rho=bundle.rho + rho,
    )


def regularized_hessian(inst: ProblemInstance, p: ParamState, rho: float, cache: Optional[ForwardCache] = None) -> HessianBundle:
    bundle = exact_hessian(inst, p, cache)
    return assemble_regularized(bundle, inst, rho) if rho > 0 else bundle


def curvature_cap(R: float) -> float:
    """Bound on every per-pair ``x`` curvature matrix.

    Two exponents circulate for this constant, ``30 R^8`` and ``30 R^10``; the
    larger is used, which is the looser cap and the safer weight threshold.
    """
    return 30.0 * max(R**8, R**10)


def psd_weight_threshold(inst: ProblemInstance, part: int = 3) -> float:
    """Smallest uniform weight ``w`` for which the regularized blocks clear ``l``.

    For the ``x`` block the rule is ``w >= l / sigma_min(A)^2 + C0`` (``part=3``)
    or ``+ 100 C0`` (``part=4``), with ``C0 = curvature_cap(R)`` and ``sigma_min(A) =
    sigma_min(A1) sigma_min(A2)`` the smallest singular value of the full
    Kronecker matrix.  For the ``y`` block it is ``w^2 >= l / sigma_min(A3)^2``
    (``+ 100 n`` for ``part=4``).  The larger of the two is returned.
    """
    if part not in (3, 4):
        raise ValueError("part must be 3 or 4")
    if inst.n < inst.d:
        return float("inf")
    s1 = np.linalg.svd(inst.A1, compute_uv=False)[-1]
    s2 = np.linalg.svd(inst.A2, compute_uv=False)[-1]
    s3 = np.linalg.svd(inst.A3, compute_uv=False)[-1]
    if min(s1, s2, s3) <= 0:
        return float("inf")
    c0 = curvature_cap(inst.R) * (100.0 if part == 4 else 1.0)
    wx = inst.l / (s1 * s2) ** 2 + c0
    wy2 = inst.l / s3**2 + (100.0 * inst.n if part == 4 else 0.0)
    return float(max(wx, np.sqrt(wy2)))


@dataclass(frozen=True)
class PsdReport:
    lambda_min_xx: float
    lambda_min_yy: float
    hxy_norm: float
    lambda_min_full: float
    block_bound: float
    block_bound_ok: bool
    threshold_met: bool
    lower_bound_ok: bool


def psd_report(bundle: HessianBundle, inst: ProblemInstance, part: int = 3) -> PsdReport:
    """Eigenvalue summary of a Hessian bundle.

    ``block_bound`` is ``min(a1 - a3, a2 - a3)`` with ``a1 = lambda_min(H_xx)``,
    ``a2 = lambda_min(H_yy)``, ``a3 = ||H_xy||``; ``block_bound_ok`` says the
    full Hessian respects it.  ``lower_bound_ok`` says ``lambda_min(H) >= l``,
    meaningful when ``threshold_met``.
    """
    a1 = lambda_min(bundle.hxx)
    a2 = lambda_min(bundle.hyy)
    a3 = spectral_norm(bundle.hxy)
    lam = lambda_min(bundle.full())
    bound = min(a1 - a3, a2 - a3)
    threshold_met = bool(np.min(inst.w) >= psd_weight_threshold(inst, part)) and bundle.reg_applied
    return PsdReport(
        lambda_min_xx=a1,
        lambda_min_yy=a2,
        hxy_norm=a3,
        lambda_min_full=lam,
        block_bound=bound,
        block_bound_ok=bool(lam >= bound - EIG_ATOL),
        threshold_met=threshold_met,
        lower_bound_ok=bool(lam >= inst.l - EIG_ATOL),
    )
