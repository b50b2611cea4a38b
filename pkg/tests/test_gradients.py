import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attn_newton.forward import ParamState, ProblemInstance, forward
from attn_newton.gradients import grad_fast, grad_naive_x, grad_reg, grad_total
from attn_newton.oracles import fd_gradient, loss_flat, plant, random_instance, random_state


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 16), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_fast_gradient_matches_finite_differences(n, d, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, d, 1.0)
    p = random_state(rng, d, 1.0)
    g = grad_fast(inst, p).flat()
    fd = fd_gradient(loss_flat(inst), p.flat())
    assert _rel(g, fd) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_fast_gradient_equals_sum_of_per_entry_terms(n, d, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, d, 1.0)
    p = random_state(rng, d, 1.0)
    cache = forward(inst, p)
    total = sum(grad_naive_x(inst, p, cache, j0, i0) for j0 in range(n) for i0 in range(d))
    np.testing.assert_allclose(total, grad_fast(inst, p, cache).gx, atol=1e-10)


def test_gradient_vanishes_at_plant():
    pl = plant(5, 12, 3)
    g = grad_fast(pl.inst, pl.p_star)
    assert g.norm <= 1e-12


def test_single_token_has_no_x_gradient(rng):
    inst = ProblemInstance([[0.5, 0.2]], [[0.3, -0.4]], [[0.6, 0.1]], [[0.3, -0.2]])
    p = random_state(rng, 2, 1.0)
    np.testing.assert_array_equal(grad_fast(inst, p).gx, np.zeros(4))


def test_naive_term_zero_when_residual_zero(rng):
    pl = plant(2, 6, 2)
    cache = forward(pl.inst, pl.p_star)
    np.testing.assert_allclose(grad_naive_x(pl.inst, pl.p_star, cache, 1, 0), 0.0, atol=1e-15)


def test_regularizer_gradient_simple_cases(rng):
    inst = random_instance(rng, 5, 2, 1.0)
    g = grad_reg(inst, ParamState.zeros(2))
    assert g.norm == 0.0
    one = ProblemInstance([[1.0]], [[1.0]], [[1.0]], [[0.0]])
    np.testing.assert_allclose(grad_reg(one, ParamState([[3.0]], [[0.0]])).gx, [3.0])


def test_regularizer_gradient_matches_finite_differences(rng):
    inst = random_instance(rng, 7, 3, 1.0, w=rng.uniform(0.5, 2.0, 7))
    p = random_state(rng, 3, 1.0)
    z = p.flat()
    fd = fd_gradient(loss_flat(inst, rho=1.0), z) - fd_gradient(loss_flat(inst), z)
    assert _rel(grad_reg(inst, p).flat(), fd) <= 1e-6
    total = grad_total(inst, p, rho=2.5)
    np.testing.assert_allclose(total.flat(), grad_fast(inst, p).flat() + 2.5 * grad_reg(inst, p).flat(), atol=1e-14)


def test_finite_difference_step_halving_is_second_order(rng):
    inst = random_instance(rng, 6, 2, 1.0)
    p = random_state(rng, 2, 1.0)
    exact = grad_fast(inst, p).flat()
    e1 = np.linalg.norm(fd_gradient(loss_flat(inst), p.flat(), 1e-2) - exact)
    e2 = np.linalg.norm(fd_gradient(loss_flat(inst), p.flat(), 5e-3) - exact)
    assert e2 == pytest.approx(e1 / 4, rel=0.1)
