import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attn_newton.forward import ParamState, ProblemInstance, forward
from attn_newton.gradients import grad_fast
from attn_newton.hessian import (
    HessianBundle,
    assemble_regularized,
    b_bar_x,
    exact_hessian,
    hess_xx_block_fast,
    hess_xx_entry,
    hess_xx_from_entries,
    hess_xy,
    hess_xy_block,
    hess_xy_entry,
    hess_yy,
    hess_yy_entry,
    hessian_from_entries,
    lambda_min,
    psd_report,
    psd_weight_threshold,
    published_x_curvature_parts,
    published_xy_curvature,
    regularizer_gram_x,
    x_curvature_parts,
    xy_curvature,
)
from attn_newton.kron import materialize_kron
from attn_newton.oracles import fd_hessian, plant, random_instance, random_state


def _fd_hessian(inst, p):
    d = inst.d
    return fd_hessian(lambda z: grad_fast(inst, ParamState.from_flat(z, d)).flat(), p.flat())


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 16), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_entry_factored_and_fd_agree(n, d, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, n, d, 1.0)
    p = random_state(rng, d, 1.0)
    cache = forward(inst, p)
    H_entry = hessian_from_entries(cache, inst)
    H_fast = exact_hessian(inst, p, cache).full()
    np.testing.assert_allclose(H_fast, H_entry, atol=1e-9)
    np.testing.assert_allclose(_fd_hessian(inst, p), H_entry, atol=1e-5)


def test_scalar_entries_match_vectorized_entries(small_case):
    inst, p = small_case
    cache = forward(inst, p)
    d = inst.d
    A = materialize_kron(inst.A1, inst.A2)
    for j0, i0, i, l in [(0, 0, 0, 0), (2, 1, 3, 5), (5, 2, 8, 1), (4, 0, 2, 2)]:
        block = A[j0 * inst.n : (j0 + 1) * inst.n]
        H_pair = block.T @ sum(x_curvature_parts(cache.f[j0], cache.h[:, i0], cache.c[j0, i0]).values()) @ block
        assert hess_xx_entry(cache, inst, j0, i0, i, l) == pytest.approx(H_pair[i, l], abs=1e-13)
    H = hessian_from_entries(cache, inst)
    dd = d * d
    for j_pair in [(0, 1), (2, 2)]:
        i, i1 = j_pair
        total = sum(hess_xy_entry(cache, inst, j0, 0, i, i1) for j0 in range(inst.n))
        assert total == pytest.approx(H[i, dd + i1 * d + 0], abs=1e-13)
    yy = sum(hess_yy_entry(cache, inst, j0, 1, 2) for j0 in range(inst.n))
    assert yy == pytest.approx(hess_yy(cache, inst)[1, 2], abs=1e-13)


def test_printed_diagonal_coefficient_misses_fd(small_case):
    inst, p = small_case
    cache = forward(inst, p)
    dd = inst.d**2
    H_fd = _fd_hessian(inst, p)[:dd, :dd]
    corrected = np.max(np.abs(hess_xx_from_entries(cache, inst) - H_fd))
    printed = np.max(np.abs(hess_xx_from_entries(cache, inst, published=True) - H_fd))
    assert corrected <= 1e-8
    assert printed > 100 * corrected


def test_printed_factorizations_differ_from_entries(small_case):
    inst, p = small_case
    cache = forward(inst, p)
    f, v, c = cache.f[1], cache.h[:, 2], cache.c[1, 2]
    fixed = sum(x_curvature_parts(f, v, c).values())
    printed = sum(published_x_curvature_parts(f, v, c).values())
    assert np.max(np.abs(fixed - printed)) > 1e-6
    assert np.max(np.abs(xy_curvature(f, v, c) - published_xy_curvature(f, v, c))) > 1e-6


def test_curvature_sum_per_row(small_case):
    inst, p = small_case
    cache = forward(inst, p)
    A = materialize_kron(inst.A1, inst.A2)
    n = inst.n
    H = sum(A[j * n : (j + 1) * n].T @ b_bar_x(cache, j) @ A[j * n : (j + 1) * n] for j in range(n))
    np.testing.assert_allclose(H, hess_xx_block_fast(cache, inst), atol=1e-13)


def test_single_token_blocks_vanish(rng):
    inst = ProblemInstance([[0.5, 0.2]], [[0.3, -0.4]], [[0.6, 0.1]], [[0.3, -0.2]])
    p = random_state(rng, 2, 1.0)
    cache = forward(inst, p)
    np.testing.assert_allclose(hess_xx_block_fast(cache, inst), 0.0, atol=1e-15)
    np.testing.assert_allclose(hess_xy(cache, inst), 0.0, atol=1e-15)
    np.testing.assert_allclose(hess_yy(cache, inst), inst.A3.T @ inst.A3, atol=1e-15)
    assert hess_xx_entry(cache, inst, 0, 1, 2, 3) == pytest.approx(0.0, abs=1e-15)


def test_one_dimensional_collapse(rng):
    inst = random_instance(rng, 5, 1, 1.0)
    p = random_state(rng, 1, 1.0)
    cache = forward(inst, p)
    total = sum(hess_xx_entry(cache, inst, j0, 0, 0, 0) for j0 in range(5))
    assert hess_xx_block_fast(cache, inst)[0, 0] == pytest.approx(total, abs=1e-14)


def test_gauss_newton_at_plant():
    pl = plant(1, 6, 2)
    cache = forward(pl.inst, pl.p_star)
    A = materialize_kron(pl.inst.A1, pl.inst.A2)
    j0, i0 = 3, 1
    block = A[j0 * 6 : (j0 + 1) * 6]
    f, v = cache.f[j0], cache.h[:, i0]
    g = (f * v) @ block - (f @ v) * (f @ block)
    for i, l in [(0, 0), (1, 3)]:
        assert hess_xx_entry(cache, pl.inst, j0, i0, i, l) == pytest.approx(g[i] * g[l], abs=1e-14)


def test_uniform_softmax_gives_rank_one_y_block(rng):
    inst = random_instance(rng, 6, 3, 1.0)
    cache = forward(inst, ParamState(np.zeros((3, 3)), rng.standard_normal((3, 3))))
    s = inst.A3.T @ np.ones(6)
    np.testing.assert_allclose(hess_yy(cache, inst), np.outer(s, s) / 6, atol=1e-14)
    assert np.linalg.matrix_rank(hess_yy(cache, inst), tol=1e-10) <= 1


def test_mixed_block_zero_for_constant_value_and_zero_residual():
    f = np.array([0.2, 0.3, 0.5])
    v = np.full(3, 0.7)
    np.testing.assert_allclose(xy_curvature(f, v, 0.0), 0.0, atol=1e-15)


def test_mixed_block_layout(small_case):
    inst, p = small_case
    cache = forward(inst, p)
    d = inst.d
    full = sum(
        np.concatenate([hess_xy_block(cache, inst, j0, i0) for i0 in range(d)], axis=1)
        for j0 in range(inst.n)
    )
    # concatenation puts column a of block i0 at i0*d + a; the layout puts it at a*d + i0
    perm = [i0 * d + a for a in range(d) for i0 in range(d)]
    np.testing.assert_allclose(hess_xy(cache, inst), full[:, perm], atol=1e-13)


def test_y_columns_do_not_couple(small_case):
    inst, p = small_case
    cache = forward(inst, p)
    H = hessian_from_entries(cache, inst)
    d = inst.d
    dd = d * d
    Hyy = H[dd:, dd:]
    for a in range(dd):
        for b in range(dd):
            if a % d != b % d:
                assert Hyy[a, b] == 0.0


def test_bundle_symmetry_and_psd_y_block(small_case):
    inst, p = small_case
    b = exact_hessian(inst, p)
    np.testing.assert_allclose(b.hxx, b.hxx.T, atol=1e-10)
    assert lambda_min(b.hyy) >= -1e-10
    H = b.full()
    np.testing.assert_array_equal(H, H.T)


def test_regularizer_gram_matches_dense(rng):
    inst = random_instance(rng, 6, 3, 1.0, w=rng.uniform(0.5, 2.0, 6))
    A = materialize_kron(inst.A1, inst.A2)
    dense = A.T @ np.kron(np.diag(inst.w**2), np.eye(6)) @ A
    np.testing.assert_allclose(regularizer_gram_x(inst), dense, atol=1e-12)


def test_regularized_hessian_matches_fd_of_penalized_gradient(rng):
    from attn_newton.gradients import grad_total

    inst = random_instance(rng, 6, 2, 1.0, w=rng.uniform(0.5, 2.0, 6))
    p = random_state(rng, 2, 1.0)
    H = assemble_regularized(exact_hessian(inst, p), inst, 1.7).full()
    fd = fd_hessian(lambda z: grad_total(inst, ParamState.from_flat(z, 2), 1.7).flat(), p.flat())
    np.testing.assert_allclose(H, fd, atol=1e-5)


def test_scalar_gram_term():
    inst = ProblemInstance([[1.0]], [[1.0]], [[1.0]], [[0.0]], w=[2.0], R=1.0)
    p = ParamState([[0.0]], [[0.0]])
    plain = exact_hessian(inst, p)
    reg = assemble_regularized(plain, inst, 1.0)
    assert reg.hxx[0, 0] - plain.hxx[0, 0] == pytest.approx(4.0)
    assert reg.reg_applied and not plain.reg_applied
    with pytest.raises(ValueError):
        assemble_regularized(plain, inst, 0.0)


def test_psd_report_closed_form_case():
    d = 2
    dd = d * d
    b = HessianBundle(hxx=2 * np.eye(dd), hxy=np.eye(dd), hyy=3 * np.eye(d))
    inst = random_instance(np.random.default_rng(0), 4, 2, 1.0)
    rep = psd_report(b, inst)
    assert rep.block_bound == pytest.approx(1.0)
    # per coordinate the matrix is [[2, 1], [1, 3]]
    assert rep.lambda_min_full == pytest.approx((5 - np.sqrt(5)) / 2)
    assert rep.block_bound_ok
    assert not rep.threshold_met


def test_psd_threshold_sweep():
    rng = np.random.default_rng(11)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(d, 17))
        inst = random_instance(rng, n, d, 1.0, l=1.0)
        inst = inst.with_weights(psd_weight_threshold(inst, 3))
        p = random_state(rng, d, 1.0)
        rep = psd_report(assemble_regularized(exact_hessian(inst, p), inst, 1.0), inst)
        assert rep.threshold_met
        assert min(rep.lambda_min_xx, rep.lambda_min_yy) >= 1.0 - 1e-8
        assert rep.block_bound_ok


def test_threshold_infinite_when_design_is_rank_deficient(rng):
    inst = random_instance(rng, 2, 3, 1.0)
    assert psd_weight_threshold(inst) == float("inf")
    with pytest.raises(ValueError):
        psd_weight_threshold(inst, part=5)


def test_curvature_part_caps():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(1, 17))
        d = int(rng.integers(1, 5))
        inst = random_instance(rng, n, d, 1.0)
        p = random_state(rng, d, 1.0)
        cache = forward(inst, p)
        for j0 in range(n):
            for i0 in range(d):
                parts = x_curvature_parts(cache.f[j0], cache.h[:, i0], cache.c[j0, i0])
                assert np.linalg.norm(parts["diag"], 2) <= 8
                assert np.linalg.norm(parts["rank1"], 2) <= 16
                assert np.linalg.norm(parts["rank2"], 2) <= 8
                assert np.linalg.norm(parts["rank3"], 2) <= 8
                assert lambda_min(parts["rank3"]) >= -1e-12


def test_hessian_lipschitz_ratio_bounded():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(2, 17))
        d = int(rng.integers(1, 5))
        inst = random_instance(rng, n, d, 1.0)
        p, q = random_state(rng, d, 1.0), random_state(rng, d, 1.0)
        ratio = np.linalg.norm(exact_hessian(inst, p).hxx - exact_hessian(inst, q).hxx, 2) / np.linalg.norm(p.x - q.x)
        assert np.isfinite(ratio)
        assert ratio <= n**1.5 * np.exp(30.0) * n * d
