"""Sketches of the Kronecker product ``Abar = (W A1) ⊗ A2`` and their quality.

Neither sketch forms the ``n^2 x d^2`` product.  TensorSRHT transforms each
factor with a randomized Hadamard transform and samples row pairs; TensorSparse
count-sketches each factor and combines the two by circular convolution.
Both return ``SA`` with ``E[SA^T SA] = Abar^T Abar``.

Hadamard scaling: with the unnormalized ``±1`` matrix, ``(H D)^T (H D) =
ñ I`` for each factor, and uniform sampling of ``m`` out of ``ñ^2`` pairs
contributes ``m / ñ^2``.  The ``1/sqrt(m)`` prefactor alone therefore gives an
unbiased Gram, and ``row_scale`` defaults to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kron import DimensionError

KINDS = ("srht", "sparse")
SAMPLINGS = ("iid", "all")
RANK_RTOL = 1e-10

_STREAM_DIAG1, _STREAM_DIAG2, _STREAM_ROWS = 1, 2, 3
_STREAM_HASH1, _STREAM_HASH2 = 11, 12


@dataclass(frozen=True)
class SketchConfig:
    """Sketch parameters.

    ``sampling="all"`` makes TensorSRHT enumerate every row pair (``m`` is
    then ``ñ^2`` regardless of the field), which reproduces the Gram exactly.
    """

    kind: str = "srht"
    m: int = 1024
    s: int = 1
    epsilon: float = 0.5
    delta: float = 0.05
    seed: int = 0
    sampling: str = "iid"
    row_scale: float = 1.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        if kind not in KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"unknown sampling {self.sampling!r}")
        if int(self.m) < 1:
            raise ValueError("sketch size m must be at least 1")
        if int(self.s) < 1:
            raise ValueError("block count s must be at least 1")
        if kind == "sparse" and int(self.m) % int(self.s) != 0:
            raise ValueError(f"s={self.s} must divide m={self.m}")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.row_scale > 0:
            raise ValueError("row_scale must be positive")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "s", int(self.s))
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class SketchedFactor:
    SA: np.ndarray
    config: SketchConfig
    n_padded: int
    rows: int

    def gram(self) -> np.ndarray:
        G = self.SA.T @ self.SA
        return 0.5 * (G + G.T)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), *key]))


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def fwht(v) -> np.ndarray:
    """Unnormalized Sylvester–Hadamard transform along axis 0.

    Accepts a vector or a matrix (transformed column by column).
    """
    a = np.array(v, dtype=float)
    if a.ndim == 0:
        raise DimensionError("fwht needs at least one axis")
    n = a.shape[0]
    if n < 1 or n & (n - 1):
        raise DimensionError(f"fwht length must be a power of two, got {n}")
    rest = a.shape[1:]
    h = 1
    while h < n:
        a = a.reshape(n // (2 * h), 2, h, *rest)
        top = a[:, 0] + a[:, 1]
        bot = a[:, 0] - a[:, 1]
        a = np.stack([top, bot], axis=1).reshape(n, *rest)
        h *= 2
    return a


def hadamard(n: int) -> np.ndarray:
    """Dense Sylvester Hadamard matrix, built by doubling (test oracle)."""
    if n < 1 or n & (n - 1):
        raise DimensionError(f"Hadamard order must be a power of two, got {n}")
    H = np.ones((1, 1))
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


def _check_factors(Abar1, A2) -> tuple[np.ndarray, np.ndarray]:
    Abar1 = np.asarray(Abar1, dtype=float)
    A2 = np.asarray(A2, dtype=float)
    if Abar1.ndim != 2 or A2.ndim != 2:
        raise DimensionError("sketch factors must be matrices")
    if Abar1.shape[0] != A2.shape[0]:
        raise DimensionError(f"factor row counts differ: {Abar1.shape[0]} vs {A2.shape[0]}")
    if Abar1.shape[1] == 0 or A2.shape[1] == 0:
        raise DimensionError("sketch factors need at least one column")
    return Abar1, A2


def _row_kron(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    return np.einsum("rp,rq->rpq", U, V).reshape(U.shape[0], U.shape[1] * V.shape[1])


def tensor_srht_apply(Abar1, A2, cfg: SketchConfig) -> SketchedFactor:
    Abar1, A2 = _check_factors(Abar1, A2)
    n = Abar1.shape[0]
    n_pad = next_pow2(n)
    signs1 = _rng(cfg.seed, _STREAM_DIAG1).choice([-1.0, 1.0], size=n_pad)
    signs2 = _rng(cfg.seed, _STREAM_DIAG2).choice([-1.0, 1.0], size=n_pad)
    P1 = np.zeros((n_pad, Abar1.shape[1]))
    P2 = np.zeros((n_pad, A2.shape[1]))
    P1[:n] = Abar1
    P2[:n] = A2
    G1 = fwht(signs1[:, None] * P1)
    G2 = fwht(signs2[:, None] * P2)
    if cfg.sampling == "all":
        a, b = np.divmod(np.arange(n_pad * n_pad), n_pad)
    else:
        idx = _rng(cfg.seed, _STREAM_ROWS).integers(0, n_pad * n_pad, size=cfg.m)
        a, b = np.divmod(idx, n_pad)
    m = a.size
    SA = _row_kron(G1[a], G2[b]) * (cfg.row_scale / math.sqrt(m))
    return SketchedFactor(SA=SA, config=cfg, n_padded=n_pad, rows=m)


def sparse_hashes(cfg: SketchConfig, n: int, k: int, which: int) -> tuple[np.ndarray, np.ndarray]:
    """Buckets in ``[0, m/s)`` and ``±1`` signs of factor ``which`` (1 or 2) in block ``k``."""
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    stream = _STREAM_HASH1 if which == 1 else _STREAM_HASH2
    rng = _rng(cfg.seed, stream, k)
    buckets = rng.integers(0, cfg.m // cfg.s, size=n)
    signs = rng.choice([-1.0, 1.0], size=n)
    return buckets, signs


def count_sketch(M: np.ndarray, buckets: np.ndarray, signs: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((size, M.shape[1]))
    np.add.at(out, buckets, signs[:, None] * M)
    return out


def tensor_sparse_apply(Abar1, A2, cfg: SketchConfig) -> SketchedFactor:
    Abar1, A2 = _check_factors(Abar1, A2)
    if cfg.m % cfg.s:
        raise ValueError(f"s={cfg.s} must divide m={cfg.m}")
    n = Abar1.shape[0]
    b = cfg.m // cfg.s
    d1, d2 = Abar1.shape[1], A2.shape[1]
    SA = np.empty((cfg.m, d1 * d2))
    for k in range(cfg.s):
        C1 = count_sketch(Abar1, *sparse_hashes(cfg, n, k, 1), b)
        C2 = count_sketch(A2, *sparse_hashes(cfg, n, k, 2), b)
        F1 = np.fft.rfft(C1, axis=0)
        F2 = np.fft.rfft(C2, axis=0)
        conv = np.fft.irfft(F1[:, :, None] * F2[:, None, :], n=b, axis=0)
        SA[k * b : (k + 1) * b] = conv.reshape(b, d1 * d2)
    SA /= math.sqrt(cfg.s)
    return SketchedFactor(SA=SA, config=cfg, n_padded=n, rows=cfg.m)


def sketch_kron(Abar1, A2, cfg: SketchConfig) -> SketchedFactor:
    if cfg.kind == "srht":
        return tensor_srht_apply(Abar1, A2, cfg)
    return tensor_sparse_apply(Abar1, A2, cfg)


def sketch_instance(inst, cfg: SketchConfig) -> SketchedFactor:
    """Sketch of ``(W A1) ⊗ A2`` for a problem instance."""
    return sketch_kron(inst.w[:, None] * inst.A1, inst.A2, cfg)


def sketched_gram(inst, cfg: SketchConfig) -> np.ndarray:
    return sketch_instance(inst, cfg).gram()


def _column_basis(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    _, sv, Vt = np.linalg.svd(A, full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        return sv[:0], Vt[:0]
    r = int(np.sum(sv > RANK_RTOL * sv[0]))
    return sv[:r], Vt[:r]


def ose_quality(Abar, SA) -> float:
    """``max_i |sigma_i(S U) - 1|`` for an orthonormal column basis ``U`` of ``Abar``.

    ``S U`` is recovered from ``SA = S Abar`` as ``SA V Sigma^{-1}``, so ``S``
    itself is never needed.
    """
    Abar = np.asarray(Abar, dtype=float)
    SA = np.asarray(SA, dtype=float)
    if SA.shape[1] != Abar.shape[1]:
        raise DimensionError("SA and Abar must have the same number of columns")
    sv, Vt = _column_basis(Abar)
    if sv.size == 0:
        return 0.0
    SU = SA @ Vt.T / sv
    sigma = np.linalg.svd(SU, compute_uv=False)
    sigma = np.concatenate([sigma, np.zeros(max(0, sv.size - sigma.size))])
    return float(np.max(np.abs(sigma - 1.0)))


@dataclass(frozen=True)
class SandwichResult:
    lo: float
    hi: float
    epsilon: float
    ok: bool


def gram_sandwich(G, Gt, epsilon: float, atol: float = 1e-10) -> SandwichResult:
    """Check ``(1 - eps) G <= Gt <= (1 + eps) G`` in the Loewner order.

    Both sides are whitened by ``G`` on its range; any part of ``Gt`` outside
    that range makes the check fail.
    """
    G = 0.5 * (np.asarray(G, float) + np.asarray(G, float).T)
    Gt = 0.5 * (np.asarray(Gt, float) + np.asarray(Gt, float).T)
    lam, V = np.linalg.eigh(G)
    keep = lam > RANK_RTOL * max(lam[-1], 0.0) if lam.size else lam > 0
    if not np.any(keep):
        ok = bool(np.linalg.norm(Gt, 2) <= atol)
        return SandwichResult(0.0, 0.0, epsilon, ok)
    Vr = V[:, keep]
    scale = 1.0 / np.sqrt(lam[keep])
    whitened = (Vr * scale).T @ Gt @ (Vr * scale)
    ratios = np.linalg.eigvalsh(0.5 * (whitened + whitened.T))
    leak = Gt - Vr @ (Vr.T @ Gt @ Vr) @ Vr.T
    lo, hi = float(ratios[0]), float(ratios[-1])
    ok = lo >= 1 - epsilon - atol and hi <= 1 + epsilon + atol and np.linalg.norm(leak) <= atol * max(1.0, np.linalg.norm(Gt))
    return SandwichResult(lo, hi, epsilon, bool(ok))


def suggested_m(kind: str, n: int, d: int, epsilon: float, delta: float, constant: float = 1.0) -> int:
    """Order-of-magnitude row count from the embedding bounds (constants unknown, set to 1)."""
    if kind == "srht":
        m = epsilon**-2 * d * d * math.log(n * d / (epsilon * delta)) ** 3
    elif kind == "sparse":
        m = epsilon**-2 * d * d * math.log(n / delta)
    else:
        raise ValueError(f"unknown sketch kind {kind!r}")
    return max(1, int(math.ceil(constant * m)))


def suggested_s(n: int, epsilon: float, delta: float) -> int:
    return max(1, int(math.ceil(math.log(n / delta) / epsilon)))


def materialized_gram(inst, max_n: Optional[int] = None) -> np.ndarray:
    """``A^T (W^2 ⊗ I) A`` through the dense Kronecker product (oracle)."""
    from .kron import ORACLE_MAX_N, materialize_kron

    A = materialize_kron(inst.w[:, None] * inst.A1, inst.A2, max_n=max_n or ORACLE_MAX_N)
    return A.T @ A
