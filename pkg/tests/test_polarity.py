import numpy as np
import pytest

from hypothesis import given, settings, assume
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from PolaKit.polarity import (ExponentParams, initExponents, sigmoid, polarDecompose, computeExponents, powerMap,
                              polaFeatureMap, baselineFeatureMap)
from PolaKit.tensor import makeRng, gaussianMatrix
from PolaKit.Utils import ParameterError, DomainError

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)

def test_decompose_example():
    pos, neg = polarDecompose(np.array([[1.5, -2.0, 0.0]]))
    assert np.array_equal(pos, [[1.5, 0.0, 0.0]])
    assert np.array_equal(neg, [[0.0, 2.0, 0.0]])

def test_decompose_zero_row():
    pos, neg = polarDecompose(np.zeros((1, 3)))
    assert not pos.any() and not neg.any()

@given(arrays(np.float64, (4, 6), elements=finite))
def test_decompose_invariants(x):
    pos, neg = polarDecompose(x)
    assert np.array_equal(pos - neg, x)
    assert np.all(pos >= 0) and np.all(neg >= 0)
    assert not np.any((pos > 0) & (neg > 0))

def test_decompose_rejects_nan():
    with pytest.raises(DomainError):
        polarDecompose(np.array([[np.nan]]))

def test_exponents():
    assert np.allclose(computeExponents(ExponentParams(np.zeros(1), 3.0)), [2.5])
    assert np.allclose(computeExponents(ExponentParams(np.array([1.0]), 5.0)), [4.655292893], atol=1e-8)
    assert np.array_equal(computeExponents(initExponents(4, 3.0)), np.full(4, 2.5))

@given(arrays(np.float64, 5, elements=st.floats(-20, 20)), st.floats(min_value=0.01, max_value=10))
def test_exponents_in_open_box(w, alpha):
    p = computeExponents(ExponentParams(w, alpha))
    assert np.all(p > 1.0) and np.all(p < 1.0 + alpha)

@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_exponents_need_positive_alpha(alpha):
    with pytest.raises(ParameterError):
        computeExponents(ExponentParams(np.zeros(2), alpha))

def test_sigmoid_extremes():
    assert np.allclose(sigmoid(np.array([-800.0, 0.0, 800.0])), [0.0, 0.5, 1.0])

def test_power_map_examples():
    assert np.allclose(powerMap(np.array([[2.0, 0.0, 3.0]]), np.full(3, 2.0)), [[4.0, 0.0, 9.0]])
    assert np.allclose(powerMap(np.array([[4.0]]), np.array([1.5])), [[8.0]])

def test_power_map_zero_stays_zero():
    assert powerMap(np.zeros((2, 2)), np.array([3.0, 1.5]))[0, 0] == 0.0

def test_power_map_near_identity():
    x = np.abs(gaussianMatrix(4, 3, makeRng(0))) * 10
    assert np.allclose(powerMap(x, np.full(3, 1.0 + 1e-9)), x, rtol=1e-7, atol=0)

def test_power_map_errors():
    with pytest.raises(DomainError):
        powerMap(np.array([[-1.0]]), np.array([2.0]))
    with pytest.raises(ParameterError):
        powerMap(np.array([[1.0]]), np.array([0.5]))
    with pytest.raises(ParameterError):
        powerMap(np.array([[1.0, 2.0]]), np.array([2.0]))

@given(st.floats(0, 100), st.floats(0.01, 100), st.floats(1.0, 5.0))
def test_power_map_monotone(a, gap, p):
    b = a + gap
    ga, gb = powerMap(np.array([[a, b]]), np.full(2, p))[0]
    assert ga < gb

@given(st.floats(0.01, 10), st.floats(0.1, 10), st.floats(1.1, 4.0))
def test_power_map_convex(a, gap, p):
    b = a + gap
    ga, gm, gb = powerMap(np.array([[a, (a + b) / 2, b]]), np.full(3, p))[0]
    assert gm < (ga + gb) / 2

def test_feature_map_layout():
    feats = polaFeatureMap(np.array([[2.0, -3.0]]), ExponentParams(np.zeros(2), 2.0))
    assert np.allclose(feats, [[4.0, 0.0, 0.0, 9.0]])

@given(arrays(np.float64, (3, 4), elements=st.floats(-100, 100)))
@settings(max_examples=50)
def test_feature_map_non_negative(x):
    feats = polaFeatureMap(x, initExponents(4, 3.0))
    assert feats.shape == (3, 8)
    assert np.all(feats >= 0)

def test_baseline_maps():
    x = np.array([[-1.0, 0.0, 2.0]])
    assert np.array_equal(baselineFeatureMap(x, 'relu'), [[0.0, 0.0, 2.0]])
    assert np.allclose(baselineFeatureMap(x, 'elu1'), [[np.exp(-1.0), 1.0, 3.0]])
    with pytest.raises(ParameterError):
        baselineFeatureMap(x, 'tanh')

@given(arrays(np.float64, (2, 3), elements=st.floats(-50, 50)))
def test_elu1_positive(x):
    assume(np.all(np.isfinite(x)))
    assert np.all(baselineFeatureMap(x, 'elu1') > 0)
