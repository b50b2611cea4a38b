import numpy as np
import pytest

from attn_newton.forward import ParamState, forward
from attn_newton.gradients import grad_fast
from attn_newton.oracles import (
    fd_gradient,
    fd_hessian,
    loss_direct,
    plant,
    random_instance,
    random_state,
    y_least_squares,
)


def test_fd_gradient_of_half_square(rng):
    x = rng.standard_normal(5)
    np.testing.assert_allclose(fd_gradient(lambda z: 0.5 * z @ z, x), x, atol=1e-9)
    np.testing.assert_array_equal(fd_gradient(lambda z: 3.0, x), np.zeros(5))


def test_fd_hessian_of_linear_map(rng):
    A = rng.standard_normal((4, 4))
    x = rng.standard_normal(4)
    np.testing.assert_allclose(fd_hessian(lambda z: A @ z, x), 0.5 * (A + A.T), atol=1e-9)
    np.testing.assert_array_equal(fd_hessian(lambda z: np.zeros(4), x), np.zeros((4, 4)))


def test_fd_rejects_bad_inputs():
    with pytest.raises(ValueError):
        fd_gradient(lambda z: 0.0, np.zeros(2), step=0.0)
    with pytest.raises(FloatingPointError):
        fd_gradient(lambda z: np.nan, np.zeros(2))
    with pytest.raises(FloatingPointError):
        fd_hessian(lambda z: np.full(2, np.inf), np.zeros(2))


def test_plant_scale_zero_gives_zero_target():
    pl = plant(0, 5, 2, scale=0.0)
    np.testing.assert_array_equal(pl.X_star, 0.0)
    np.testing.assert_array_equal(pl.inst.B, 0.0)


def test_plant_single_token_target_is_value_row():
    pl = plant(1, 1, 3)
    np.testing.assert_allclose(pl.inst.B, pl.inst.A3 @ pl.Y_star, atol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_plants_have_zero_loss_and_gradient(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 17)), int(rng.integers(1, 5))
    pl = plant(seed, n, d, R=float(rng.choice([0.5, 1.0, 4.0])))
    cache = forward(pl.inst, pl.p_star)
    assert cache.loss <= 1e-20
    assert loss_direct(pl.inst, pl.p_star) <= 1e-20
    assert grad_fast(pl.inst, pl.p_star, cache).norm <= 1e-10


def test_plant_is_reproducible():
    a, b = plant(42, 6, 2), plant(42, 6, 2)
    np.testing.assert_array_equal(a.inst.B, b.inst.B)
    np.testing.assert_array_equal(a.X_star, b.X_star)


def test_random_state_respects_bound(rng):
    for _ in range(50):
        p = random_state(rng, 3, 2.0)
        assert p.is_bounded(2.0)


def test_y_least_squares_recovers_planted_values():
    pl = plant(3, 10, 3)
    np.testing.assert_allclose(y_least_squares(pl.inst, pl.X_star), pl.Y_star, atol=1e-9)
    zero_target = pl.inst.with_target(np.zeros((10, 3)))
    np.testing.assert_allclose(y_least_squares(zero_target, pl.X_star), 0.0, atol=1e-15)


def test_y_least_squares_is_stationary_in_y(rng):
    inst = random_instance(rng, 9, 3, 1.0)
    X = random_state(rng, 3, 1.0).X
    Y = y_least_squares(inst, X)
    g = grad_fast(inst, ParamState(X, Y))
    assert g.norm_y <= 1e-12
