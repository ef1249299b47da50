import math

import numpy as np
import pytest

from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from PolaKit.polarity import ExponentParams
from PolaKit.entropy import (pse, hFunction, rowEntropyProfile, theorem1Check, theorem1Trial, lemma2Check,
                             entropyComparison)
from PolaKit.Utils import DomainError, ParameterError

positive = st.floats(min_value=1e-3, max_value=1e3)

def test_pse_examples():
    assert pse([1, 1, 1, 1]) == pytest.approx(math.log(4), abs=1e-15)
    assert pse([1, 0, 0]) == 0.0
    assert pse([2, 1]) == pytest.approx(0.636514, abs=1e-6)
    assert pse([4, 1]) == pytest.approx(0.500402, abs=1e-6)

def test_pse_undefined():
    with pytest.raises(DomainError):
        pse([0, 0, 0])
    with pytest.raises(DomainError):
        pse([1, -1])
    with pytest.raises(DomainError):
        pse([1, np.inf])

@given(arrays(np.float64, 6, elements=positive), positive)
def test_pse_scale_invariant(x, c):
    assert abs(pse(x) - pse(c * x)) < 1e-12

@given(arrays(np.float64, 8, elements=st.floats(0, 100)))
def test_pse_bounds(x):
    nonzero = np.count_nonzero(x)
    if nonzero == 0:
        return
    value = pse(x)
    assert -1e-15 <= value <= math.log(nonzero) + 1e-12

def test_h_function():
    assert hFunction(1.0) == pytest.approx(math.log(2))
    assert hFunction(2.0) == pytest.approx(pse([2, 1]), abs=1e-14)
    assert hFunction(0.5) == pytest.approx(hFunction(2.0), abs=1e-15)
    grid = np.linspace(1.0, 100.0, 1000)
    values = [hFunction(c) for c in grid]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))

def test_profile_identity_and_uniform():
    assert np.array_equal(rowEntropyProfile(np.eye(3)).per_row, np.zeros(3))
    report = rowEntropyProfile(np.ones((4, 4)))
    assert np.allclose(report.per_row, math.log(4))
    assert report.mean == pytest.approx(math.log(4))

def test_profile_flags_zero_rows():
    report = rowEntropyProfile(np.array([[1.0, 1.0], [0.0, 0.0]]))
    assert list(report.undefined) == [False, True]
    assert math.isnan(report.per_row[1])
    assert report.mean == pytest.approx(math.log(2))

def test_profile_negative_entries():
    m = np.array([[1.0, -1.0], [2.0, 2.0]])
    with pytest.raises(DomainError):
        rowEntropyProfile(m)
    report = rowEntropyProfile(m, clampNegative=True)
    assert report.per_row[0] == 0.0

def test_softmax_flatter_than_relu():
    wins = 0
    for trial in range(100):
        record = entropyComparison(0, trial, 49, 16, 3.0)
        wins += record['pse_softmax'] < record['pse_relu']
    assert wins >= 95

def test_pola_sharper_than_relu():
    below = sum(entropyComparison(0, trial, 49, 16, 3.0)['pola_below_relu'] for trial in range(200))
    assert below >= 190

def test_comparison_record():
    record = entropyComparison(3, 0, 10, 4, 3.0)
    assert 0.0 < record['opposite_share'] < 1.0
    assert record == entropyComparison(3, 0, 10, 4, 3.0)

def test_theorem_scalar_example():
    report = theorem1Check([1.0], [[2.0], [1.0]], ExponentParams(np.zeros(1), 2.0))
    assert report.pse_before == pytest.approx(0.636514, abs=1e-6)
    assert report.pse_after == pytest.approx(0.500402, abs=1e-6)
    assert report.reduced and not report.constant

def test_theorem_constant_sequence():
    report = theorem1Check([1.0, 2.0], [[1.0, 1.0], [1.0, 1.0]], ExponentParams(np.zeros(2), 3.0))
    assert report.constant and not report.reduced
    assert report.pse_before == pytest.approx(math.log(2))
    assert report.pse_after == pytest.approx(math.log(2))

def test_theorem_excludes_zero_products():
    report = theorem1Check([1.0, 0.0], [[2.0, 5.0], [0.0, 3.0], [1.0, 1.0]], ExponentParams(np.zeros(2), 2.0))
    assert report.excluded == 1
    assert report.reduced

def test_theorem_rejects_negative():
    with pytest.raises(DomainError):
        theorem1Check([1.0, -1.0], [[1.0, 1.0]], ExponentParams(np.zeros(2), 3.0))

def test_theorem_monte_carlo():
    reports = [theorem1Trial(0, trial, 32, 16, 3.0) for trial in range(1000)]
    assert all(r.reduced for r in reports)

@pytest.mark.parametrize("alpha", [5.0, 7.0])
def test_theorem_monte_carlo_sharper_exponents(alpha):
    assert all(theorem1Trial(1, trial, 32, 16, alpha).reduced for trial in range(200))

def test_lemma():
    before, after = lemma2Check(2.0, 1.0, 2.0)
    assert before == pytest.approx(0.636514, abs=1e-6)
    assert after == pytest.approx(0.500402, abs=1e-6)
    assert lemma2Check(1.0, 2.0, 2.0) == (before, after)

def test_lemma_equal_pair():
    assert lemma2Check(3.0, 3.0, 4.0) == (math.log(2), math.log(2))

def test_lemma_errors():
    with pytest.raises(ParameterError):
        lemma2Check(2.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        lemma2Check(0.0, 1.0, 2.0)

@given(st.floats(1.01, 50), st.floats(1.01, 6))
@settings(max_examples=50)
def test_lemma_reduces(c, p):
    before, after = lemma2Check(c, 1.0, p)
    assert after < before

@pytest.mark.parametrize("a, b", [(1e200, 1.0), (1e-300, 1e300), (1.0, 5e-324)])
def test_lemma_extreme_ratios(a, b):
    before, after = lemma2Check(a, b, 2.0)
    assert math.isfinite(before) and math.isfinite(after)
    assert 0.0 <= after <= before < math.log(2)

def test_h_function_domain():
    with pytest.raises(DomainError):
        hFunction(0.0)
    assert hFunction(1e300) == pytest.approx((1.0 + 300 * math.log(10)) * 1e-300, rel=1e-9, abs=0)
