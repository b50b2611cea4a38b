import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attn_newton.kron import (
    DimensionError,
    KronBlockOperator,
    OracleCapError,
    kron_block_apply,
    kron_block_apply_transpose,
    kron_block_congruence,
    mat_rowmajor,
    materialize_kron,
    vec_rowmajor,
)


def test_vec_rowmajor_small():
    np.testing.assert_array_equal(vec_rowmajor([[1, 2], [3, 4]]), [1, 2, 3, 4])
    np.testing.assert_array_equal(vec_rowmajor([[7]]), [7])


def test_mat_rowmajor_rejects_wrong_length():
    with pytest.raises(DimensionError):
        mat_rowmajor(np.arange(5.0), 2)
    with pytest.raises(DimensionError):
        vec_rowmajor(np.zeros((2, 3)))


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_vec_mat_roundtrip(d, seed):
    X = np.random.default_rng(seed).standard_normal((d, d))
    np.testing.assert_array_equal(mat_rowmajor(vec_rowmajor(X), d), X)


def test_tensor_trick_matches_dense_kron(rng):
    A1 = rng.standard_normal((4, 2))
    A2 = rng.standard_normal((4, 2))
    X = rng.standard_normal((2, 2))
    lhs = vec_rowmajor(A1 @ X @ A2.T)
    rhs = materialize_kron(A1, A2) @ vec_rowmajor(X)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_block_apply_trivial_cases():
    op = KronBlockOperator.from_factors([[2.0]], [[3.0]], 0)
    np.testing.assert_allclose(kron_block_apply(op, [5.0]), [30.0])
    np.testing.assert_allclose(kron_block_apply_transpose(op, [1.0]), [6.0])
    op2 = KronBlockOperator.from_factors(np.ones((3, 2)), np.ones((3, 2)), 1)
    np.testing.assert_array_equal(kron_block_apply(op2, np.zeros(4)), np.zeros(3))
    np.testing.assert_array_equal(kron_block_apply_transpose(op2, np.zeros(3)), np.zeros(4))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_stacked_blocks_equal_dense_product(n, d, seed):
    rng = np.random.default_rng(seed)
    A1 = rng.standard_normal((n, d))
    A2 = rng.standard_normal((n, d))
    x = rng.standard_normal(d * d)
    A = materialize_kron(A1, A2)
    stacked = np.concatenate([KronBlockOperator.from_factors(A1, A2, j).apply(x) for j in range(n)])
    np.testing.assert_allclose(stacked, A @ x, atol=1e-12)
    v = rng.standard_normal(n)
    for j in range(n):
        op = KronBlockOperator.from_factors(A1, A2, j)
        np.testing.assert_allclose(op.apply_transpose(v), A[j * n : (j + 1) * n].T @ v, atol=1e-12)
        assert op.apply(x) @ v == pytest.approx(x @ op.apply_transpose(v), abs=1e-12)


def test_block_congruence_matches_dense(rng):
    A1 = rng.standard_normal((5, 3))
    A2 = rng.standard_normal((5, 3))
    inner = rng.standard_normal((5, 5))
    block = materialize_kron(A1, A2)[2 * 5 : 3 * 5]
    np.testing.assert_allclose(kron_block_congruence(A1[2], A2, inner), block.T @ inner @ block, atol=1e-12)


def test_materialize_small_cases():
    np.testing.assert_array_equal(materialize_kron([[1.0]], [[1.0]]), [[1.0]])
    np.testing.assert_array_equal(materialize_kron(np.eye(2), np.eye(2)), np.eye(4))
    a, b, c, d = 2.0, 3.0, 5.0, 7.0
    np.testing.assert_array_equal(materialize_kron([[a], [b]], [[c], [d]]), [[a * c], [a * d], [b * c], [b * d]])


def test_materialize_refuses_above_cap():
    with pytest.raises(OracleCapError):
        materialize_kron(np.ones((17, 2)), np.ones((17, 2)))
    with pytest.raises(OracleCapError):
        materialize_kron(np.ones((4, 5)), np.ones((4, 5)))


def test_block_operator_dimension_checks():
    with pytest.raises(DimensionError):
        KronBlockOperator(np.ones(3), np.ones((4, 2)))
    with pytest.raises(DimensionError):
        KronBlockOperator.from_factors(np.ones((2, 2)), np.ones((2, 2)), 5)
    op = KronBlockOperator.from_factors(np.ones((2, 2)), np.ones((2, 2)), 0)
    with pytest.raises(DimensionError):
        op.apply_transpose(np.ones(3))
