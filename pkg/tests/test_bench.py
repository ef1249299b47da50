import pytest

from hypothesis import given
from hypothesis import strategies as st

from PolaKit import bench
from PolaKit.bench import flopModel, timeAttention, scalingExponent, fitPowerLaw, benchGrid, normalizedSpread, BenchResult
from PolaKit.Utils import ParameterError

def test_flop_model_values():
    assert flopModel(196, 64, 64, 3) == 7_350_784
    assert flopModel(1, 1, 1, 1) == 11

def test_flop_model_doubles_with_n():
    assert flopModel(2048, 32, 64, 3) == 2 * flopModel(1024, 32, 64, 3)

@given(st.integers(1, 10_000), st.integers(1, 128), st.integers(1, 256), st.integers(1, 9))
def test_flop_model_linear_in_n(n, d, dPrime, k):
    assert flopModel(n, d, dPrime, k) == n * flopModel(1, d, dPrime, k)

@pytest.mark.parametrize("args", [(0, 1, 1, 1), (1, 0, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)])
def test_flop_model_rejects_zero(args):
    with pytest.raises(ParameterError):
        flopModel(*args)

def test_scaling_exponent_linear():
    ns = [1024, 2048, 4096, 8192]
    assert scalingExponent(ns, [3.0 * n for n in ns]) == pytest.approx(1.0, abs=1e-6)

def test_scaling_exponent_quadratic():
    ns = [128, 256, 512, 1024, 2048]
    assert scalingExponent(ns, [n * n for n in ns]) == pytest.approx(2.0, abs=1e-6)

def test_scaling_exponent_from_results():
    results = [BenchResult('pola', n, 32, 5, 7 * n) for n in (64, 128, 256, 512)]
    assert scalingExponent(results) == pytest.approx(1.0, abs=1e-6)

def test_scaling_exponent_grid_errors():
    with pytest.raises(ParameterError):
        scalingExponent([1024, 2048, 4096], [1.0, 2.0, 4.0])
    with pytest.raises(ParameterError):
        scalingExponent([1000, 2000, 3000, 4000], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ParameterError):
        scalingExponent([1, 2, 4, 8], [1.0, 0.0, 4.0, 8.0])

def test_power_law_fit_quality():
    slope, r2 = fitPowerLaw([1, 2, 4, 8], [5.0, 10.0, 20.0, 40.0])
    assert slope == pytest.approx(1.0)
    assert r2 == pytest.approx(1.0)

def test_normalized_spread():
    results = [BenchResult('pola', n, 8, 5, 10 * n) for n in (1, 2, 4)]
    assert normalizedSpread(results) == pytest.approx(1.0)

@pytest.mark.parametrize("variant", ['softmax', 'linear-relu', 'pola'])
def test_time_attention_small(variant):
    result = timeAttention(variant, 32, 8, reps=5)
    assert result.variant == variant and result.n == 32 and result.reps == 5
    assert result.median_ns > 0
    if variant == 'pola':
        assert result.flop_model == flopModel(32, 8, 16, 3)
        assert result.flop_model_dprime_d == flopModel(32, 8, 8, 3)
    else:
        assert result.flop_model is None

def test_time_attention_errors():
    with pytest.raises(ParameterError):
        timeAttention('pola', 32, 8, workers=2)
    with pytest.raises(ParameterError):
        timeAttention('pola', 32, 8, reps=4)
    with pytest.raises(ParameterError):
        timeAttention('performer', 32, 8)

def test_bench_grid_order():
    results = benchGrid(['softmax', 'pola'], [16, 32], 4)
    assert [(r.variant, r.n) for r in results] == [('softmax', 16), ('softmax', 32), ('pola', 16), ('pola', 32)]

@pytest.mark.bench
def test_pola_time_doubles_with_n():
    results = [timeAttention('pola', n, 32, reps=11) for n in (1024, 2048, 4096, 8192)]
    for a, b in zip(results, results[1:]):
        assert 1.6 <= b.median_ns / a.median_ns <= 2.6
    assert 0.8 <= scalingExponent(results) <= 1.2

@pytest.mark.bench
def test_softmax_time_quadruples_with_n():
    results = [timeAttention('softmax', n, 32, reps=11) for n in (1024, 2048, 4096, 8192)]
    for a, b in zip(results, results[1:]):
        assert 3.0 <= b.median_ns / a.median_ns <= 5.0

@pytest.mark.bench
def test_pola_time_per_token_bounded():
    results = [timeAttention('pola', n, 32, reps=11) for n in (1024, 2048, 4096, 8192)]
    assert normalizedSpread(results) <= 2.2

def test_time_attention_single_threaded(monkeypatch):
    calls = []
    real = bench.threadpool_limits
    def recording(limits=None, user_api=None):
        calls.append(limits)
        return real(limits=limits, user_api=user_api)
    monkeypatch.setattr(bench, 'threadpool_limits', recording)
    timeAttention('linear-relu', 16, 4, reps=5)
    assert calls == [1]
