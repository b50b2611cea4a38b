"""Property battery: measurements against the oracles plus pass/fail verdicts.

Each ``measure_*`` function returns raw per-instance measurements so tests can
apply their own thresholds; each suite turns them into
:class:`PropertyResult` rows for the JSON report.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .forward import ParamState, alpha_diagnostics, forward
from .gradients import grad_fast, grad_naive_x
from .hessian import (
    assemble_regularized,
    curvature_cap,
    exact_hessian,
    hess_xx_from_entries,
    hess_xy_block,
    hessian_from_entries,
    lambda_min,
    psd_report,
    psd_weight_threshold,
    published_x_curvature_parts,
    published_xy_curvature,
    regularized_hessian,
    x_curvature_parts,
)
from .kron import materialize_kron
from .oracles import fd_gradient, fd_hessian, loss_flat, plant, random_instance, random_state
from .seeds import rng_for
from .sketch import SketchConfig, gram_sandwich, next_pow2, ose_quality, sketch_kron
from .solver import SolverConfig, contraction_audit, good_check, iteration_budget, train

SUITES = ("gradient", "hessian", "psd", "sketch", "contraction", "norms")

GRAD_RTOL = 1e-6
NAIVE_ATOL = 1e-10
HESS_PAIR_TOL = 1e-9
HESS_FD_TOL = 1e-5
EIG_ATOL = 1e-8
SANDWICH_EPS = 0.5
SANDWICH_RATE = 0.95
EXACT_SKETCH_TOL = 1e-10
UNBIASED_RTOL = 0.05
CONTRACTION = 0.4
R_FLOOR = 1e-10
SKETCH_GRAD_TOL = 1e-8


@dataclass
class PropertyResult:
    suite: str
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    threshold: Optional[float] = None
    note: str = ""


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def _sizes(rng, max_n=16, max_d=4, square_ok=True):
    d = int(rng.integers(1, max_d + 1))
    n = int(rng.integers(d if square_ok else 1, max_n + 1))
    return n, d


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


def measure_gradients(seed: int, count: int = 100, corrupt: bool = False) -> list[dict]:
    """FD relative error of the fast gradient and its gap to the per-entry sum."""
    rng = rng_for(seed, "verify-gradient")
    out = []
    for _ in range(count):
        n, d = _sizes(rng, square_ok=False)
        inst = random_instance(rng, n, d, 1.0)
        p = random_state(rng, d, 1.0)
        cache = forward(inst, p)
        g = grad_fast(inst, p, cache)
        fast = g.flat()
        if corrupt:
            fast = np.concatenate([-g.gx, g.gy])
        fd = fd_gradient(loss_flat(inst), p.flat())
        rel = float(np.linalg.norm(fast - fd) / max(np.linalg.norm(fd), 1e-12))
        naive = sum(grad_naive_x(inst, p, cache, j0, i0) for j0 in range(n) for i0 in range(d))
        out.append({"n": n, "d": d, "rel_err": rel, "naive_gap": float(np.max(np.abs(naive - g.gx)))})
    return out


def _published_hxy(cache, inst) -> np.ndarray:
    d, n = inst.d, inst.n
    A = materialize_kron(inst.A1, inst.A2)
    H = np.zeros((d * d, d * d))
    for j0 in range(n):
        block = A[j0 * n : (j0 + 1) * n]
        for i0 in range(d):
            M = published_xy_curvature(cache.f[j0], cache.h[:, i0], cache.c[j0, i0])
            H[:, i0::d] += block.T @ M @ inst.A3
    return H


def measure_hessians(seed: int, count: int = 30) -> list[dict]:
    """Entry form vs factored form vs finite differences of the gradient."""
    rng = rng_for(seed, "verify-hessian")
    out = []
    for _ in range(count):
        n, d = _sizes(rng, square_ok=False)
        inst = random_instance(rng, n, d, 1.0)
        p = random_state(rng, d, 1.0)
        cache = forward(inst, p)
        H_entry = hessian_from_entries(cache, inst)
        bundle = exact_hessian(inst, p, cache)
        H_fast = bundle.full()
        H_fd = fd_hessian(lambda z: grad_fast(inst, ParamState.from_flat(z, d)).flat(), p.flat())
        dd = d * d
        published_xx = hess_xx_from_entries(cache, inst, published=True)
        out.append(
            {
                "n": n,
                "d": d,
                "entry_vs_fast": _rel(H_fast, H_entry),
                "fd_vs_entry": _rel(H_fd, H_entry),
                "fd_vs_fast": _rel(H_fd, H_fast),
                "symmetry": float(np.max(np.abs(H_fast - H_fast.T))),
                "published_xx_gap": _rel(published_xx, H_entry[:dd, :dd]),
                "published_xy_gap": _rel(_published_hxy(cache, inst), H_entry[:dd, dd:]),
            }
        )
    return out


def measure_psd(seed: int, count: int = 50, part: int = 3, rho: float = 1.0) -> list[dict]:
    """Regularized blocks with a uniform weight at the threshold, ``l = 1``."""
    rng = rng_for(seed, "verify-psd")
    out = []
    for _ in range(count):
        n, d = _sizes(rng)
        inst = random_instance(rng, n, d, 1.0, l=1.0)
        w = psd_weight_threshold(inst, part)
        inst = inst.with_weights(w)
        p = random_state(rng, d, 1.0)
        bundle = assemble_regularized(exact_hessian(inst, p), inst, rho)
        rep = psd_report(bundle, inst, part)
        out.append({"n": n, "d": d, "w": w, **asdict(rep)})
    return out


def measure_curvature_caps(seed: int, count: int = 50, R: float = 1.0) -> list[dict]:
    """Spectral norms of the ``x`` curvature parts and the weight sandwich."""
    rng = rng_for(seed, "verify-caps")
    out = []
    for _ in range(count):
        n, d = _sizes(rng)
        inst = random_instance(rng, n, d, R)
        p = random_state(rng, d, R)
        cache = forward(inst, p)
        w = psd_weight_threshold(inst, 4)
        W2 = np.full(n, w * w)
        norms = {"diag": 0.0, "rank1": 0.0, "rank2": 0.0, "rank3": 0.0}
        published = dict(norms)
        rank3_min = math.inf
        sandwich_ok = True
        for j0 in range(n):
            for i0 in range(d):
                parts = x_curvature_parts(cache.f[j0], cache.h[:, i0], cache.c[j0, i0])
                for key, M in parts.items():
                    norms[key] = max(norms[key], float(np.linalg.norm(M, 2)))
                for key, M in published_x_curvature_parts(cache.f[j0], cache.h[:, i0], cache.c[j0, i0]).items():
                    published[key] = max(published[key], float(np.linalg.norm(M, 2)))
                rank3_min = min(rank3_min, lambda_min(parts["rank3"]))
                Bsum = sum(parts.values()) + np.diag(W2)
                U = rng.standard_normal((100, n))
                U /= np.linalg.norm(U, axis=1, keepdims=True)
                q_reg = np.einsum("ki,ij,kj->k", U, Bsum, U)
                q_w = (U * U) @ W2
                sandwich_ok &= bool(np.all(0.9 * q_reg <= q_w) and np.all(q_w <= 1.1 * q_reg))
        out.append({"n": n, "d": d, "norms": norms, "published_norms": published, "rank3_lambda_min": rank3_min, "sandwich_ok": sandwich_ok})
    return out


def measure_sketch(seed: int, kind: str, count: int = 40, n: int = 8, d: int = 2, m: int = 1024, s: int = 4, epsilon: float = SANDWICH_EPS) -> dict:
    rng = rng_for(seed, f"verify-sketch-{kind}")
    A1 = rng.standard_normal((n, d))
    A2 = rng.standard_normal((n, d))
    w = rng.uniform(0.5, 2.0, size=n)
    Abar = np.kron(w[:, None] * A1, A2)
    G = Abar.T @ Abar
    rows = []
    mean = np.zeros_like(G)
    for k in range(count):
        cfg = SketchConfig(kind=kind, m=m, s=s if kind == "sparse" else 1, epsilon=epsilon, seed=int(seed) * 1000 + k)
        F = sketch_kron(w[:, None] * A1, A2, cfg)
        Gt = F.gram()
        mean += Gt / count
        res = gram_sandwich(G, Gt, epsilon)
        rows.append({"lo": res.lo, "hi": res.hi, "ok": res.ok, "ose": ose_quality(Abar, F.SA)})
    out = {
        "kind": kind,
        "runs": rows,
        "pass_rate": float(np.mean([r["ok"] for r in rows])),
        "median_ose": float(np.median([r["ose"] for r in rows])),
        "mean_rel_err": float(np.linalg.norm(mean - G) / np.linalg.norm(G)),
    }
    if kind == "srht":
        n_pad = next_pow2(n)
        exact = sketch_kron(w[:, None] * A1, A2, SketchConfig(kind="srht", m=n_pad * n_pad, sampling="all", seed=seed))
        out["exact_sampling_err"] = float(np.max(np.abs(exact.gram() - G)) / max(1.0, float(np.max(np.abs(G)))))
        out["exact_sampling_ose"] = ose_quality(Abar, exact.SA)
    return out


def planted_contraction_case(seed: int, n: int = 16, d: int = 3, R: float = 4.0, sketch_m: int = 1024, sparse_s: int = 4, samples: int = 30) -> dict:
    """Exact and sketched Newton on one planted instance, started inside the verified basin.

    Exact runs use ``rho = 0`` and the plant as reference; ``l`` is the smallest
    Hessian eigenvalue there and ``r0 = 0.09 l / M_hat``.  Sketched runs use
    ``rho = 1`` with the regularized optimum (found by exact Newton) as reference.
    """
    pl = plant(seed, n, d, R)
    ps = pl.p_star
    out = {"seed": seed}
    rng = rng_for(seed, "solver")

    def start(center: ParamState, r0: float) -> ParamState:
        u = rng.standard_normal(2 * d * d)
        u_state = ParamState.from_flat(u, d)
        scale = r0 / u_state.distance(ParamState.zeros(d))
        return ParamState.from_flat(center.flat() + scale * u, d)

    l0 = lambda_min(regularized_hessian(pl.inst, ps, 0.0).full())
    inst0 = replace(pl.inst, l=max(l0, 1e-300))
    r0 = 0.09 * l0 / max(good_check(inst0, ps, samples, rho=0.0, seed=seed).M_hat, 1e-300)
    init = start(ps, r0)
    report = good_check(inst0, ps, samples, r0=init.distance(ps), rho=0.0, seed=seed)
    tr = train(inst0, init, SolverConfig(t_max=50, eps=1e-300, rho=0.0, dist_tol=R_FLOOR), plant=ps)
    audit = contraction_audit(tr, CONTRACTION, R_FLOOR)
    out["exact"] = {
        "l": l0,
        "M_hat": report.M_hat,
        "r0": init.distance(ps),
        "good": report.good,
        "reason": tr.reason,
        "updates": tr.updates,
        "ratios": audit.ratios.tolist(),
        "contraction_ok": audit.ok,
        "final_r": float(tr.radii()[-1]),
    }

    opt = train(pl.inst, ps, SolverConfig(t_max=100, eps=1e-13, rho=1.0)).final
    l1 = lambda_min(regularized_hessian(pl.inst, opt, 1.0).full())
    inst1 = replace(pl.inst, l=l1)
    r1 = 0.09 * l1 / max(good_check(inst1, opt, samples, rho=1.0, seed=seed).M_hat, 1e-300)
    init1 = start(opt, r1)
    report1 = good_check(inst1, opt, samples, r0=init1.distance(opt), rho=1.0, seed=seed)
    budget = iteration_budget(init1.distance(opt), SKETCH_GRAD_TOL, CONTRACTION)
    sketched = {}
    for kind in ("srht", "sparse"):
        cfg = SketchConfig(kind=kind, m=sketch_m, s=sparse_s if kind == "sparse" else 1, seed=seed)
        trk = train(inst1, init1, SolverConfig(t_max=budget + 50, eps=SKETCH_GRAD_TOL, rho=1.0, sketch=cfg), plant=opt)
        sketched[kind] = {
            "reason": trk.reason,
            "updates": trk.updates,
            "final_grad": trk.final_grad_norm,
            "within_budget": trk.reason == "grad_tol" and trk.updates <= budget,
        }
    out["sketched"] = {"l": l1, "M_hat": report1.M_hat, "r0": init1.distance(opt), "good": report1.good, "budget": budget, **sketched}
    return out


def measure_norms(seed: int, count: int = 100, R: float = 1.0) -> list[dict]:
    """Softmax normalizer floor and the norm caps on random bounded points."""
    rng = rng_for(seed, "verify-norms")
    out = []
    for _ in range(count):
        n, d = _sizes(rng, square_ok=False)
        inst = random_instance(rng, n, d, R)
        p = random_state(rng, d, R)
        cache = forward(inst, p)
        diag = alpha_diagnostics(inst, p, cache)
        xy_pair = 0.0
        for j0 in range(n):
            for i0 in range(d):
                xy_pair = max(xy_pair, float(np.linalg.norm(hess_xy_block(cache, inst, j0, i0), 2)))
        out.append(
            {
                "n": n,
                "d": d,
                "alpha_min": diag.alpha_min,
                "beta_ok": diag.beta_bound_ok,
                "alpha_floor": math.exp(-R * R),
                "max_f_row_norm": float(np.max(np.linalg.norm(cache.f, axis=1))),
                "max_abs_c": float(np.max(np.abs(cache.c))),
                "max_hxy_pair_norm": xy_pair,
            }
        )
    return out


def measure_hessian_pair_norms(seed: int, count: int = 30, R: float = 1.0) -> list[dict]:
    """``||A_j0^T B A_j0||`` per pair and an empirical Lipschitz ratio of ``H_xx``."""
    rng = rng_for(seed, "verify-pairs")
    out = []
    for _ in range(count):
        n, d = _sizes(rng)
        inst = random_instance(rng, n, d, R)
        p = random_state(rng, d, R)
        q = random_state(rng, d, R)
        cache = forward(inst, p)
        A = materialize_kron(inst.A1, inst.A2)
        pair_max = 0.0
        for j0 in range(n):
            block = A[j0 * n : (j0 + 1) * n]
            for i0 in range(d):
                B = sum(x_curvature_parts(cache.f[j0], cache.h[:, i0], cache.c[j0, i0]).values())
                pair_max = max(pair_max, float(np.linalg.norm(block.T @ B @ block, 2)))
        hp = exact_hessian(inst, p, cache).hxx
        hq = exact_hessian(inst, q).hxx
        dist = float(np.linalg.norm(p.x - q.x))
        lip = float(np.linalg.norm(hp - hq, 2)) / dist if dist > 0 else 0.0
        out.append({"n": n, "d": d, "pair_norm": pair_max, "lipschitz_ratio": lip})
    return out


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def suite_gradient(seed: int, count: int = 100, corrupt: bool = False) -> list[PropertyResult]:
    rows = measure_gradients(seed, count, corrupt)
    worst = max(r["rel_err"] for r in rows)
    naive = max(r["naive_gap"] for r in rows)
    return [
        PropertyResult("gradient", "fd_relative_error", worst <= GRAD_RTOL, {"max": worst, "instances": len(rows)}, GRAD_RTOL),
        PropertyResult("gradient", "per_entry_sum_gap", naive <= NAIVE_ATOL, {"max": naive}, NAIVE_ATOL),
    ]


def suite_hessian(seed: int, count: int = 30) -> list[PropertyResult]:
    rows = measure_hessians(seed, count)
    pair = max(r["entry_vs_fast"] for r in rows)
    fd = max(max(r["fd_vs_entry"], r["fd_vs_fast"]) for r in rows)
    sym = max(r["symmetry"] for r in rows)
    return [
        PropertyResult("hessian", "entry_vs_factored", pair <= HESS_PAIR_TOL, {"max": pair, "instances": len(rows)}, HESS_PAIR_TOL),
        PropertyResult("hessian", "fd_agreement", fd <= HESS_FD_TOL, {"max": fd}, HESS_FD_TOL),
        PropertyResult("hessian", "symmetry", sym <= 1e-10, {"max": sym}, 1e-10),
        PropertyResult(
            "hessian",
            "published_factorization_gap",
            True,
            {
                "xx_max": max(r["published_xx_gap"] for r in rows),
                "xy_max": max(r["published_xy_gap"] for r in rows),
            },
            None,
            "informational: printed B(x) and B(x,y) coefficients vs the entry formulas; the entry formulas are used",
        ),
    ]


def suite_psd(seed: int, count: int = 50) -> list[PropertyResult]:
    rows = measure_psd(seed, count)
    lam = min(min(r["lambda_min_xx"], r["lambda_min_yy"]) for r in rows)
    caps = measure_curvature_caps(seed, max(1, count // 5))
    cap_limits = {"diag": 8.0, "rank1": 16.0, "rank2": 8.0, "rank3": 8.0}
    cap_max = {k: max(r["norms"][k] for r in caps) for k in cap_limits}
    return [
        PropertyResult("psd", "regularized_blocks_lower_bound", lam >= 1.0 - EIG_ATOL, {"min": lam, "instances": len(rows)}, 1.0),
        PropertyResult("psd", "block_combination_bound", all(r["block_bound_ok"] for r in rows), {"checked": len(rows)}),
        PropertyResult("psd", "full_hessian_lower_bound", all(r["lower_bound_ok"] for r in rows), {"min": min(r["lambda_min_full"] for r in rows)}, 1.0),
        PropertyResult("psd", "curvature_part_caps", all(cap_max[k] <= cap_limits[k] for k in cap_limits) and min(r["rank3_lambda_min"] for r in caps) >= -EIG_ATOL, {"max": cap_max}),
        PropertyResult("psd", "weight_sandwich", all(r["sandwich_ok"] for r in caps), {"checked": len(caps)}),
    ]


def suite_sketch(seed: int, count: int = 40) -> list[PropertyResult]:
    out = []
    for kind in ("srht", "sparse"):
        res = measure_sketch(seed, kind, count)
        out.append(PropertyResult("sketch", f"{kind}_sandwich_rate", res["pass_rate"] >= SANDWICH_RATE, {"rate": res["pass_rate"], "median_ose": res["median_ose"]}, SANDWICH_RATE))
        out.append(PropertyResult("sketch", f"{kind}_unbiased_mean", res["mean_rel_err"] <= UNBIASED_RTOL, {"rel_err": res["mean_rel_err"]}, UNBIASED_RTOL))
        if kind == "srht":
            out.append(PropertyResult("sketch", "srht_exact_sampling", res["exact_sampling_err"] <= EXACT_SKETCH_TOL, {"err": res["exact_sampling_err"]}, EXACT_SKETCH_TOL))
    return out


def suite_contraction(seed: int, count: int = 3) -> list[PropertyResult]:
    cases = [planted_contraction_case(seed * 100 + k) for k in range(count)]
    exact_ok = all(c["exact"]["good"] and c["exact"]["contraction_ok"] and c["exact"]["final_r"] <= R_FLOOR for c in cases)
    sk_ok = all(c["sketched"]["good"] and c["sketched"][k]["within_budget"] for c in cases for k in ("srht", "sparse"))
    worst = max((max(c["exact"]["ratios"]) if c["exact"]["ratios"] else 0.0) for c in cases)
    return [
        PropertyResult("contraction", "exact_newton_contraction", exact_ok, {"worst_ratio": worst, "cases": count}, CONTRACTION),
        PropertyResult(
            "contraction",
            "sketched_newton_budget",
            sk_ok,
            {"updates": [[c["sketched"][k]["updates"] for k in ("srht", "sparse")] for c in cases], "budgets": [c["sketched"]["budget"] for c in cases]},
        ),
    ]


def suite_norms(seed: int, count: int = 100) -> list[PropertyResult]:
    rows = measure_norms(seed, count)
    pairs = measure_hessian_pair_norms(seed, max(1, count // 5))
    R = 1.0
    return [
        PropertyResult("norms", "alpha_floor", all(r["beta_ok"] for r in rows), {"min_alpha": min(r["alpha_min"] for r in rows)}, math.exp(-R * R)),
        PropertyResult("norms", "softmax_row_norm", max(r["max_f_row_norm"] for r in rows) <= 1 + 1e-12, {"max": max(r["max_f_row_norm"] for r in rows)}, 1.0),
        PropertyResult("norms", "residual_cap", max(r["max_abs_c"] for r in rows) <= 2 * R * R, {"max": max(r["max_abs_c"] for r in rows)}, 2 * R * R),
        PropertyResult("norms", "mixed_block_cap", max(r["max_hxy_pair_norm"] for r in rows) <= 10 * R * R, {"max": max(r["max_hxy_pair_norm"] for r in rows)}, 10 * R * R),
        PropertyResult("norms", "pair_hessian_cap", max(r["pair_norm"] for r in pairs) <= curvature_cap(R) * R * R, {"max": max(r["pair_norm"] for r in pairs)}, curvature_cap(R) * R * R),
        PropertyResult("norms", "hessian_lipschitz_finite", all(math.isfinite(r["lipschitz_ratio"]) for r in pairs), {"max": max(r["lipschitz_ratio"] for r in pairs)}),
    ]


SUITE_FUNCS: dict[str, Callable[..., list[PropertyResult]]] = {
    "gradient": suite_gradient,
    "hessian": suite_hessian,
    "psd": suite_psd,
    "sketch": suite_sketch,
    "contraction": suite_contraction,
    "norms": suite_norms,
}


def run_battery(suites: Iterable[str], seed: int = 0, corrupt_gradient: bool = False, quick: bool = False) -> dict:
    """Run the selected suites; ``quick`` shrinks instance counts for smoke runs."""
    suites = list(suites)
    unknown = [s for s in suites if s not in SUITE_FUNCS]
    if unknown:
        raise ValueError(f"unknown suites {unknown}; choose from {SUITES}")
    results: list[PropertyResult] = []
    timings = {}
    for name in suites:
        start = time.perf_counter()
        kwargs = {}
        if quick:
            kwargs["count"] = {"gradient": 10, "hessian": 4, "psd": 5, "sketch": 10, "contraction": 1, "norms": 10}[name]
        if name == "gradient":
            kwargs["corrupt"] = corrupt_gradient
        results.extend(SUITE_FUNCS[name](seed, **kwargs))
        timings[name] = time.perf_counter() - start
    if not results:
        status = "no_tests"
    else:
        status = "pass" if all(r.passed for r in results) else "fail"
    return {
        "status": status,
        "seed": seed,
        "suites": suites,
        "properties": [asdict(r) for r in results],
        "failed": [f"{r.suite}.{r.name}" for r in results if not r.passed],
        "seconds": timings,
    }
