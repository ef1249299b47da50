import numpy as np
import pytest

from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from PolaKit.tensor import makeRng, matmul, rowSoftmax, gaussianMatrix, asMatrix
from PolaKit.Utils import ShapeError, ParameterError, DomainError

finite = st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False)

def naiveMatmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out

def test_matmul_identity():
    assert np.array_equal(matmul(np.eye(2), np.array([[3.0, 4.0], [5.0, 6.0]])), [[3.0, 4.0], [5.0, 6.0]])

def test_matmul_row_column():
    assert matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))[0, 0] == 11.0

def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))

@given(st.integers(0, 2**32))
@settings(max_examples=25, deadline=None)
def test_matmul_matches_loops(seed):
    rng = makeRng(seed)
    a = gaussianMatrix(3, 4, rng)
    b = gaussianMatrix(4, 5, rng)
    assert np.allclose(matmul(a, b), naiveMatmul(a, b), rtol=0, atol=1e-14)

def test_matmul_associative():
    rng = makeRng(11)
    a, b, c = (gaussianMatrix(8, 8, rng) for _ in range(3))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) / np.max(np.abs(left)) < 1e-10

def test_matmul_rejects_overflow():
    with pytest.raises(DomainError):
        matmul(np.array([[1e200]]), np.array([[1e200]]))

def test_softmax_examples():
    assert np.allclose(rowSoftmax(np.zeros((1, 2))), [[0.5, 0.5]])
    assert np.allclose(rowSoftmax(np.array([[0.0, np.log(3.0)]])), [[0.25, 0.75]], atol=1e-15)
    assert np.allclose(rowSoftmax(np.array([[1000.0, 1000.0]])), [[0.5, 0.5]])

def test_softmax_does_not_mutate():
    m = np.array([[1.0, 2.0, 3.0]])
    rowSoftmax(m)
    assert np.array_equal(m, [[1.0, 2.0, 3.0]])

@given(arrays(np.float64, (3, 5), elements=finite), st.floats(min_value=-100, max_value=100))
def test_softmax_shift_invariant(m, c):
    a = rowSoftmax(m)
    b = rowSoftmax(m + c)
    assert np.allclose(a, b, rtol=0, atol=1e-12)
    assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(a >= 0)

def test_softmax_rejects_nan():
    with pytest.raises(DomainError):
        rowSoftmax(np.array([[0.0, np.nan]]))

def test_gaussian_deterministic():
    a = gaussianMatrix(4, 3, makeRng(42))
    b = gaussianMatrix(4, 3, makeRng(42))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gaussianMatrix(4, 3, makeRng(43)))

def test_gaussian_moments():
    m = gaussianMatrix(100, 100, makeRng(1))
    assert abs(m.mean()) < 0.05
    assert abs(m.var() - 1.0) < 0.1

@pytest.mark.parametrize("rows, cols", [(0, 3), (3, 0), (-1, 2)])
def test_gaussian_rejects_empty(rows, cols):
    with pytest.raises(ShapeError):
        gaussianMatrix(rows, cols, makeRng(0))

@pytest.mark.parametrize("seed", [-1, 2**64])
def test_seed_range(seed):
    with pytest.raises(ParameterError):
        makeRng(seed)

def test_rng_is_philox():
    assert isinstance(makeRng(0).bit_generator, np.random.Philox)

def test_as_matrix_promotes_vectors():
    assert asMatrix([1, 2, 3]).shape == (1, 3)
    with pytest.raises(ShapeError):
        asMatrix(np.zeros((2, 2, 2)))
