"""Timing sweep: sketched vs materialized Gram construction and full iterations."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .forward import ParamState, forward
from .gradients import grad_total
from .oracles import random_instance, random_state
from .seeds import rng_for
from .sketch import SketchConfig, sketch_instance
from .solver import SolverConfig, build_approx_hessian, newton_step

DEFAULT_NS = tuple(2**k for k in range(8, 14))
ITERATION_MAX_N = 4096
GRAM_CHUNK_ROWS = 1 << 16


@dataclass(frozen=True)
class BenchRow:
    n: int
    method: str
    median_ms: float


def streamed_exact_gram(Abar1: np.ndarray, A2: np.ndarray) -> np.ndarray:
    """``Abar^T Abar`` by forming the rows of ``Abar1 ⊗ A2`` chunk by chunk.

    This is the direct route whose cost grows like ``n^2 d^4``; chunking only
    caps peak memory.
    """
    n, d1 = Abar1.shape
    d2 = A2.shape[1]
    G = np.zeros((d1 * d2, d1 * d2))
    step = max(1, GRAM_CHUNK_ROWS // n)
    for start in range(0, n, step):
        rows = np.einsum("jp,kq->jkpq", Abar1[start : start + step], A2).reshape(-1, d1 * d2)
        G += rows.T @ rows
    return G


def time_call(fn: Callable[[], object], reps: int) -> float:
    """Median wall time in ms over ``reps`` calls, after one untimed warm-up."""
    fn()
    samples = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e3)
    return float(statistics.median(samples))


def _one_iteration(inst, p: ParamState, cfg: SolverConfig, gram_x=None):
    cache = forward(inst, p)
    g = grad_total(inst, p, cfg.rho, cache)
    H = build_approx_hessian(inst, cache, cfg, p, gram_x)
    return newton_step(p, g, H)


def run_bench(
    ns: Iterable[int] = DEFAULT_NS,
    d: int = 4,
    reps: int = 5,
    m: int = 1024,
    seed: int = 0,
    kind: str = "srht",
    s: int = 4,
    iterations: bool = True,
    iteration_max_n: int = ITERATION_MAX_N,
) -> list[BenchRow]:
    rows = []
    sketch_cfg = SketchConfig(kind=kind, m=m, s=s if kind == "sparse" else 1, seed=seed)
    rng = rng_for(seed, "bench")
    for n in ns:
        inst = random_instance(rng, int(n), d, 1.0)
        Abar1 = inst.w[:, None] * inst.A1
        rows.append(BenchRow(n, "sketched_gram", time_call(lambda: sketch_instance(inst, sketch_cfg).gram(), reps)))
        rows.append(BenchRow(n, "exact_gram", time_call(lambda: streamed_exact_gram(Abar1, inst.A2), reps)))
        if iterations and n <= iteration_max_n:
            p = random_state(rng, d, 1.0)
            sk = SolverConfig(rho=1.0, sketch=sketch_cfg)
            ex = SolverConfig(rho=1.0)
            rows.append(BenchRow(n, "iteration_sketched", time_call(lambda: _one_iteration(inst, p, sk), reps)))
            rows.append(BenchRow(n, "iteration_exact", time_call(lambda: _one_iteration(inst, p, ex), reps)))
    return rows


def fit_exponent(rows: list[BenchRow], method: str, ns: Optional[Iterable[int]] = None) -> float:
    """Least-squares slope of ``log(time)`` against ``log(n)`` for one method."""
    keep = set(ns) if ns is not None else None
    pts = [(r.n, r.median_ms) for r in rows if r.method == method and (keep is None or r.n in keep)]
    if len(pts) < 2:
        return float("nan")
    x = np.log([p[0] for p in pts])
    y = np.log([max(p[1], 1e-9) for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def bench_csv(rows: list[BenchRow]) -> str:
    lines = ["n,method,median_ms"]
    lines += [f"{r.n},{r.method},{r.median_ms:.4f}" for r in rows]
    return "\n".join(lines) + "\n"
