import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from saga_attn.errors import DimensionError
from saga_attn.instrument import count_multiplies
from saga_attn.linalg import (
    as_matrix,
    hadamard,
    matmul,
    numerical_rank,
    outer,
    random_matrix,
    row_softmax,
    sigmoid_map,
)

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


def test_matmul_identity(normal):
    m = normal(3, 4)
    np.testing.assert_array_equal(matmul(np.eye(3), m), m)


def test_matmul_hand_case():
    got = matmul(as_matrix([[1, 2], [3, 4]]), as_matrix([[5], [6]]))
    np.testing.assert_array_equal(got, [[17], [39]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"4x2 by 3x5"):
        matmul(np.zeros((4, 2)), np.zeros((3, 5)))


def test_matmul_counts_multiplies():
    with count_multiplies() as c:
        matmul(np.ones((4, 3)), np.ones((3, 5)))
    assert c.total == 60


def test_hadamard_cases(normal):
    m = normal(3, 3)
    np.testing.assert_array_equal(hadamard(m, np.ones_like(m)), m)
    np.testing.assert_array_equal(hadamard(m, np.zeros_like(m)), np.zeros_like(m))
    np.testing.assert_array_equal(
        hadamard(as_matrix([[1, 2], [3, 4]]), as_matrix([[5, 6], [7, 8]])), [[5, 12], [21, 32]]
    )
    with pytest.raises(DimensionError):
        hadamard(np.ones((2, 2)), np.ones((2, 3)))


def test_outer_cases():
    e1 = np.array([[1.0], [0.0]])
    expected = np.zeros((2, 2))
    expected[0, 0] = 1
    np.testing.assert_array_equal(outer(e1, e1.T), expected)
    np.testing.assert_array_equal(outer(np.array([[1.0], [2.0]]), np.array([[3.0, 4.0]])), [[3, 4], [6, 8]])
    np.testing.assert_array_equal(outer(np.zeros((3, 1)), np.array([[1.0, 2.0]])), np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        outer(np.ones((2, 2)), np.ones((1, 2)))


def test_row_softmax_cases():
    np.testing.assert_allclose(row_softmax(np.zeros((1, 3)), 0.7), [[1 / 3] * 3], atol=1e-15)
    big = row_softmax(np.array([[1000.0, 0.0]]), 1.0)
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [[1.0, 0.0]], atol=1e-12)
    e = math.e
    np.testing.assert_allclose(row_softmax(np.array([[1.0, 2.0]])), [[e / (e + e**2), e**2 / (e + e**2)]], rtol=1e-14)
    with pytest.raises(ValueError):
        row_softmax(np.zeros((1, 2)), 0.0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=finite))
def test_row_softmax_rows_sum_to_one(m):
    out = row_softmax(m, 1.0)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_row_softmax_f32_tolerance(normal):
    out = row_softmax((normal(5, 7) * 100).astype(np.float32), 1.0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_sigmoid_cases():
    assert sigmoid_map(np.array([[0.0]]))[0, 0] == 0.5
    assert sigmoid_map(np.array([[math.log(3.0)]]))[0, 0] == pytest.approx(0.75, abs=1e-15)
    sat = sigmoid_map(np.array([[1e4, 800.0, -1e4, -800.0]]))
    assert np.all(np.isfinite(sat)) and np.all(sat > 0) and np.all(sat < 1)
    sat32 = sigmoid_map(np.array([[100.0, -100.0]], dtype=np.float32))
    assert sat32.dtype == np.float32 and np.all(sat32 > 0) and np.all(sat32 < 1)


def test_numerical_rank_cases(normal):
    assert numerical_rank(np.eye(5), 1e-8) == 5
    assert numerical_rank(np.diag([1.0, 1e-3, 1e-14]), 1e-8) == 2
    assert numerical_rank(outer(normal(6, 1, label="u"), normal(1, 4, label="v")), 1e-8) == 1
    assert numerical_rank(np.zeros((3, 4)), 1e-8) == 0
    with pytest.raises(ValueError):
        numerical_rank(np.eye(2), 1.5)


def test_numerical_rank_default_tol_by_dtype():
    m = np.diag([1.0, 1e-6])
    assert numerical_rank(m) == 2
    assert numerical_rank(m.astype(np.float32)) == 1


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-10, 10)),
    st.floats(1e-3, 1e3).flatmap(lambda x: st.sampled_from([x, -x])),
)
def test_numerical_rank_bounded_and_scale_invariant(m, c):
    r = numerical_rank(m, 1e-8)
    assert 0 <= r <= min(m.shape)
    assert numerical_rank(c * m, 1e-8) == r


def test_random_matrix_determinism_and_bounds():
    a = random_matrix(7, 5, 42)
    np.testing.assert_array_equal(a, random_matrix(7, 5, 42))
    assert np.any(a != random_matrix(7, 5, 43))
    assert np.all(np.abs(a) <= math.sqrt(6 / 12))
    assert np.any(a != random_matrix(7, 5, 42, label="other"))
    n = random_matrix(50, 50, 1, "normal", scale=3.0)
    assert 2.0 < n.std() < 4.0
    assert random_matrix(2, 2, 0, dtype=np.float32).dtype == np.float32
    with pytest.raises(DimensionError):
        random_matrix(0, 3, 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 256), st.integers(0, 2**32))
def test_hadamard_identity_property(d, seed):
    a, c = (random_matrix(d, 1, seed, "normal", label=x) for x in "ac")
    b, e = (random_matrix(1, d, seed, "normal", label=x) for x in "bd")
    lhs = hadamard(outer(a, b), outer(c, e))
    rhs = outer(hadamard(a, c), hadamard(b, e))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 64), st.integers(1, 64), st.integers(0, 1000))
def test_matmul_associativity(m, n, p, q, seed):
    a = random_matrix(m, n, seed, "normal", label="a")
    b = random_matrix(n, p, seed, "normal", label="b")
    c = random_matrix(p, q, seed, "normal", label="c")
    bound = 1e-9 * np.abs(a).max() * np.abs(b).max() * np.abs(c).max() * n * p
    assert np.max(np.abs(matmul(matmul(a, b), c) - matmul(a, matmul(b, c)))) <= bound
