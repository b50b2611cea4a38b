"""Approximate Newton training loop.

Each iteration runs forward -> gradient of the training objective
``L + rho * penalty`` -> approximate Hessian -> SPD solve -> update.

In sketched mode the Hessian surrogate is block diagonal: the ``x`` block is
``rho`` times the sketched Gram of ``(W A1) ⊗ A2`` and the ``y`` block is
exact.  The Gram depends only on the data, so it is sketched once per run.
Exact mode uses the full regularized Hessian instead.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .forward import ForwardCache, ParamState, ProblemInstance, forward, regularizer
from .gradients import GradientPair, grad_total
from .hessian import expand_yy, hess_yy, lambda_min, regularized_hessian, regularizer_gram_y
from .kron import DimensionError
from .seeds import rng_for
from .sketch import SketchConfig, sketch_instance

DAMPING_REL = 1e-8
DAMPING_GROWTH = 10.0
DAMPING_RETRIES = 3
REASONS = ("grad_tol", "dist_tol", "max_iter", "non_finite", "solve_failed")


class SolverError(RuntimeError):
    """Raised when the Newton system cannot be factored even after damping."""


@dataclass(frozen=True)
class SolverConfig:
    """Stopping, regularization and Hessian-mode settings.

    ``sketch=None`` selects the exact Hessian.  ``damping=None`` uses
    ``1e-8 * trace(H) / (2 d^2)``.  ``dist_tol`` stops once the distance to a
    supplied reference point falls below it.
    """

    t_max: int = 50
    eps: float = 1e-8
    rho: float = 1.0
    sketch: Optional[SketchConfig] = None
    damping: Optional[float] = None
    contraction_assert: Optional[float] = 0.4
    dist_tol: Optional[float] = None

    def __post_init__(self):
        if int(self.t_max) < 1:
            raise ValueError("t_max must be at least 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if self.sketch is not None and not self.rho > 0:
            raise ValueError("sketched Hessian needs rho > 0: its x block is the penalty Gram")
        if self.damping is not None and self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.dist_tol is not None and not self.dist_tol > 0:
            raise ValueError("dist_tol must be positive")
        object.__setattr__(self, "t_max", int(self.t_max))

    @property
    def mode(self) -> str:
        return "exact" if self.sketch is None else self.sketch.kind


@dataclass(frozen=True)
class IterationRecord:
    t: int
    loss: float
    grad_norm_x: float
    grad_norm_y: float
    step_norm: Optional[float]
    r_t: Optional[float]
    t_forward_ms: float = 0.0
    t_grad_ms: float = 0.0
    t_hess_ms: float = 0.0
    t_solve_ms: float = 0.0

    @property
    def grad_norm(self) -> float:
        return math.hypot(self.grad_norm_x, self.grad_norm_y)


@dataclass
class IterationTrace:
    records: list[IterationRecord] = field(default_factory=list)
    reason: str = ""
    final: Optional[ParamState] = None
    damping_used: list[float] = field(default_factory=list)

    @property
    def updates(self) -> int:
        return sum(r.step_norm is not None for r in self.records)

    @property
    def iterations(self) -> int:
        return self.updates

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else float("nan")

    @property
    def final_grad_norm(self) -> float:
        return self.records[-1].grad_norm if self.records else float("nan")

    def radii(self) -> np.ndarray:
        return np.array([np.nan if r.r_t is None else r.r_t for r in self.records])


@dataclass(frozen=True)
class ApproxHessian:
    matrix: np.ndarray
    mode: str
    damping: float


def default_damping(H: np.ndarray) -> float:
    return DAMPING_REL * float(np.trace(H)) / H.shape[0]


def _with_damping(H: np.ndarray, damping: Optional[float]) -> tuple[float, np.ndarray]:
    lam = default_damping(H) if damping is None else float(damping)
    lam = max(lam, 0.0)
    return lam, H + lam * np.eye(H.shape[0])


def build_approx_hessian(
    inst: ProblemInstance,
    cache: ForwardCache,
    cfg: SolverConfig,
    p: Optional[ParamState] = None,
    gram_x: Optional[np.ndarray] = None,
) -> ApproxHessian:
    """Surrogate Hessian of the training objective at the state behind ``cache``.

    Sketched mode needs the sketched ``x``-block Gram (``gram_x``, already
    multiplied by ``rho``); when omitted it is drawn from ``cfg.sketch``.
    Exact mode needs the state ``p``.
    """
    if cfg.sketch is None:
        if p is None:
            raise ValueError("exact mode needs the parameter state")
        H = regularized_hessian(inst, p, cfg.rho, cache).full()
        mode = "exact"
    else:
        if gram_x is None:
            gram_x = cfg.rho * sketch_instance(inst, cfg.sketch).gram()
        K = hess_yy(cache, inst) + cfg.rho * regularizer_gram_y(inst)
        dd = inst.d * inst.d
        H = np.zeros((2 * dd, 2 * dd))
        H[:dd, :dd] = gram_x
        H[dd:, dd:] = expand_yy(K)
        mode = cfg.sketch.kind
    lam, Hd = _with_damping(H, cfg.damping)
    return ApproxHessian(0.5 * (Hd + Hd.T), mode, lam)


def newton_step(state: ParamState, grads: GradientPair, H: ApproxHessian) -> tuple[ParamState, np.ndarray, float]:
    """``z - H^{-1} g`` by Cholesky; on failure add damping, growing it tenfold up to three times.

    Returns the new state, the step ``H^{-1} g`` and the damping finally used.
    """
    g = grads.flat()
    if H.matrix.shape != (g.size, g.size):
        raise DimensionError(f"Hessian shape {H.matrix.shape} does not match gradient length {g.size}")
    M = H.matrix
    lam = H.damping
    bump = lam if lam > 0 else max(DAMPING_REL * float(np.trace(M)) / M.shape[0], np.finfo(float).tiny)
    for attempt in range(DAMPING_RETRIES + 1):
        try:
            factor = cho_factor(M, lower=True, check_finite=True)
            delta = cho_solve(factor, g)
            if not np.all(np.isfinite(delta)):
                raise LinAlgError("non-finite Newton step")
            return ParamState.from_flat(state.flat() - delta, state.d), delta, lam
        except (LinAlgError, ValueError):
            if attempt == DAMPING_RETRIES:
                break
            bump *= DAMPING_GROWTH
            M = M + bump * np.eye(M.shape[0])
            lam += bump
    raise SolverError(f"Newton system not positive definite after {DAMPING_RETRIES} damping increases (damping={lam:.3e})")


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1e3


def train(
    inst: ProblemInstance,
    init: ParamState,
    cfg: SolverConfig,
    plant: Optional[ParamState] = None,
) -> IterationTrace:
    """Run the Newton loop from ``init``; ``plant`` enables the ``r_t`` column."""
    if init.d != inst.d:
        raise DimensionError(f"initial state has d={init.d}, instance has d={inst.d}")
    trace = IterationTrace()
    gram_x = None
    if cfg.sketch is not None:
        gram_x = cfg.rho * sketch_instance(inst, cfg.sketch).gram()
    p = init
    t = 0
    while True:
        t0 = time.perf_counter()
        try:
            cache = forward(inst, p)
        except (FloatingPointError, ValueError):
            trace.reason = "non_finite"
            break
        objective = cache.loss + (cfg.rho * regularizer(inst, p) if cfg.rho else 0.0)
        t_fwd = _ms(t0)
        t0 = time.perf_counter()
        g = grad_total(inst, p, cfg.rho, cache)
        t_grad = _ms(t0)
        r_t = None if plant is None else p.distance(plant)
        if not (math.isfinite(objective) and np.all(np.isfinite(g.flat()))):
            trace.reason = "non_finite"
            trace.records.append(IterationRecord(t, objective, g.norm_x, g.norm_y, None, r_t, t_fwd, t_grad))
            break

        reason = None
        if g.norm <= cfg.eps:
            reason = "grad_tol"
        elif cfg.dist_tol is not None and r_t is not None and r_t <= cfg.dist_tol:
            reason = "dist_tol"
        elif t >= cfg.t_max:
            reason = "max_iter"
        if reason is not None:
            trace.records.append(IterationRecord(t, objective, g.norm_x, g.norm_y, None, r_t, t_fwd, t_grad))
            trace.reason = reason
            break

        t0 = time.perf_counter()
        H = build_approx_hessian(inst, cache, cfg, p, gram_x)
        t_hess = _ms(t0)
        t0 = time.perf_counter()
        try:
            p_next, delta, lam = newton_step(p, g, H)
        except SolverError:
            trace.records.append(IterationRecord(t, objective, g.norm_x, g.norm_y, None, r_t, t_fwd, t_grad, t_hess))
            trace.reason = "solve_failed"
            break
        t_solve = _ms(t0)
        trace.damping_used.append(lam)
        trace.records.append(
            IterationRecord(t, objective, g.norm_x, g.norm_y, float(np.linalg.norm(delta)), r_t, t_fwd, t_grad, t_hess, t_solve)
        )
        p = p_next
        t += 1
    trace.final = p
    return trace


@dataclass(frozen=True)
class ContractionAudit:
    ratios: np.ndarray
    factor: float
    floor: float
    ok: bool


def contraction_audit(trace: IterationTrace, factor: float = 0.4, floor: float = 1e-10) -> ContractionAudit:
    """Check ``r_{t+1} <= factor * r_t`` for every step taken while ``r_t > floor``."""
    r = trace.radii()
    if np.any(np.isnan(r)):
        raise ValueError("trace has no distance column; pass the reference point to train")
    ratios = []
    ok = True
    for a, b in zip(r[:-1], r[1:]):
        if a <= floor:
            break
        ratios.append(b / a)
        ok &= bool(b <= factor * a)
    return ContractionAudit(np.array(ratios), factor, floor, bool(ok))


def shrinking_bound_ok(trace: IterationTrace, eps0: float, M: float, l: float, floor: float = 1e-10) -> bool:
    """Check ``r_{t+1} <= 2 (eps0 + M r_t / (l - M r_t)) r_t`` wherever ``M r_t < l``."""
    r = trace.radii()
    for a, b in zip(r[:-1], r[1:]):
        if a <= floor:
            break
        if M * a >= l:
            return False
        if b > 2.0 * (eps0 + M * a / (l - M * a)) * a * (1 + 1e-9):
            return False
    return True


def iteration_budget(r0: float, eps: float, factor: float = 0.4, slack: int = 5) -> int:
    """``ceil(log(r0 / eps) / log(1 / factor)) + slack``."""
    if r0 <= eps:
        return slack
    return int(math.ceil(math.log(r0 / eps) / math.log(1.0 / factor))) + slack


@dataclass(frozen=True)
class GoodReport:
    lambda_min: float
    l: float
    M_hat: float
    M_hat_blocks: dict
    r0: Optional[float]
    good: bool


def _lipschitz_pairs(inst, state, rho, sample_count, radius, rng):
    dd = inst.d * inst.d
    z0 = state.flat()
    best = 0.0
    blocks = {"xx": 0.0, "xy": 0.0, "yy": 0.0}
    for _ in range(sample_count):
        u = rng.standard_normal((2, 2 * dd))
        u *= radius * rng.uniform(size=(2, 1)) / np.linalg.norm(u, axis=1, keepdims=True)
        pa = ParamState.from_flat(z0 + u[0], inst.d)
        pb = ParamState.from_flat(z0 + u[1], inst.d)
        dist = pa.distance(pb)
        if dist == 0:
            continue
        ha = regularized_hessian(inst, pa, rho)
        hb = regularized_hessian(inst, pb, rho)
        best = max(best, float(np.linalg.norm(ha.full() - hb.full(), 2)) / dist)
        blocks["xx"] = max(blocks["xx"], float(np.linalg.norm(ha.hxx - hb.hxx, 2)) / dist)
        blocks["xy"] = max(blocks["xy"], float(np.linalg.norm(ha.hxy - hb.hxy, 2)) / dist)
        blocks["yy"] = max(blocks["yy"], float(np.linalg.norm(ha.hyy - hb.hyy, 2)) / dist)
    return best, blocks


def good_check(
    inst: ProblemInstance,
    state: ParamState,
    sample_count: int = 50,
    r0: Optional[float] = None,
    rho: float = 1.0,
    radius: float = 0.5,
    seed: int = 0,
) -> GoodReport:
    """Local curvature and Lipschitz diagnostics around ``state``.

    ``M_hat`` is the largest ``||H(p) - H(p')|| / dist(p, p')`` over
    ``sample_count`` random pairs drawn from the ball of ``radius`` around
    ``state``.  ``good`` requires ``lambda_min(H(state)) >= l`` and, when
    ``r0`` is given, ``r0 * M_hat <= 0.1 l``.
    """
    H = regularized_hessian(inst, state, rho)
    lam = lambda_min(H.full())
    M_hat, blocks = _lipschitz_pairs(inst, state, rho, sample_count, radius, rng_for(seed, "verify"))
    good = lam >= inst.l - 1e-8
    if r0 is not None:
        good = good and r0 * M_hat <= 0.1 * inst.l
    return GoodReport(lam, inst.l, M_hat, blocks, r0, bool(good))
