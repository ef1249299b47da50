"""
Timing harness for the attention variants and the operation count model.

Timed sections always run single threaded and in process.
"""

import math
import time
from typing import NamedTuple, Optional

import colorlog
import numpy as np
from threadpoolctl import threadpool_limits

from .tensor import makeRng, gaussianMatrix
from .attention import AttentionConfig, softmaxAttention, linearAttention, polaAttention, initPolaParams, featureMapFor
from .Utils import ParameterError

log = colorlog.getLogger('polakit.bench')

VARIANTS = ['softmax', 'linear-relu', 'pola']
WARMUP = 3
MIN_REPS = 5

class BenchResult(NamedTuple):
    variant: str
    n: int
    d: int
    reps: int
    median_ns: int
    flop_model: Optional[int] = None            # d' = 2d, the concatenated feature width
    flop_model_dprime_d: Optional[int] = None   # d' = d

def flopModel(n, d, dPrime, k) -> int:
    """
    Operation count of one pola attention block:

        5 N d^2  (projections)  +  4 N d d'  (attention)  +  k^2 N d  (conv)  +  N d  (coefficients)
    """
    for name, value in (('n', n), ('d', d), ('dPrime', dPrime), ('k', k)):
        if value < 1:
            raise ParameterError(f"{name} must be at least 1, got {value}")
    return 5 * n * d * d + 4 * n * d * dPrime + k * k * n * d + n * d

def _makeRunner(variant, n, d, seed, kernelSize):
    rng = makeRng(seed)
    q, k, v = (gaussianMatrix(n, d, rng) for _ in range(3))
    match variant:
        case 'softmax':
            return lambda: softmaxAttention(q, k, v)
        case 'linear-relu':
            phi = featureMapFor('relu')
            return lambda: linearAttention(q, k, v, phi, 'linear')
        case 'pola':
            cfg = AttentionConfig(n, d, use_dwc=True, dwc_kernel_size=kernelSize)
            params = initPolaParams(cfg)
            return lambda: polaAttention(q, k, v, params, cfg, 'linear')
        case _:
            raise ParameterError(f"Unknown benchmark variant {variant}")

def timeAttention(variant, n, d, reps=MIN_REPS, seed=0, kernelSize=3, workers=1) -> BenchResult:
    """
    Median wall clock time of one forward pass.   Inputs are built before timing
    starts, and every result is consumed so the work can't be skipped.
    """
    if workers != 1:
        raise ParameterError("Timed sections must run single threaded")
    if reps < MIN_REPS:
        raise ParameterError(f"Need at least {MIN_REPS} repetitions, got {reps}")

    run = _makeRunner(variant, n, d, seed, kernelSize)
    sink = 0.0
    times = []
    # BLAS and OpenMP pools are pinned to one thread for warm-up and timing
    with threadpool_limits(limits=1):
        for _ in range(WARMUP):
            sink += float(run().sum())

        for _ in range(reps):
            start = time.perf_counter_ns()
            out = run()
            times.append(time.perf_counter_ns() - start)
            sink += float(out.sum())

    median = int(np.median(times))
    resolution = time.get_clock_info('perf_counter').resolution * 1e9
    if resolution > 0.01 * median:
        log.warning("Timer resolution %.0f ns is coarse for a %d ns measurement, result unreliable", resolution, median)
    log.debug("%s n=%d d=%d median %d ns (checksum %.6g)", variant, n, d, median, sink)

    flops = flopsDual = None
    if variant == 'pola':
        flops = flopModel(n, d, 2 * d, kernelSize)
        flopsDual = flopModel(n, d, d, kernelSize)
    return BenchResult(variant, n, d, reps, median, flops, flopsDual)

def fitPowerLaw(ns, times) -> tuple[float, float]:
    """ Least squares fit of log time against log N.   Returns (slope, R^2) """
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / total if total > 0 else 1.0
    return float(slope), float(r2)

def scalingExponent(results, times=None) -> float:
    """
    Fitted exponent of time against N.   results is a list of BenchResult, or a list of
    N values with times given separately.
    """
    if times is None:
        ns = [r.n for r in results]
        times = [r.median_ns for r in results]
    else:
        ns = list(results)
        times = list(times)

    if len(ns) < 4 or len(ns) != len(times):
        raise ParameterError(f"Need at least 4 grid points, got {len(ns)}")
    for a, b in zip(ns, ns[1:]):
        if b != 2 * a:
            raise ParameterError(f"Grid must double at every step, got {a} then {b}")
    if any(not t > 0 for t in times):
        raise ParameterError("Times must be positive")

    slope, r2 = fitPowerLaw(ns, times)
    if any(b <= a for a, b in zip(times, times[1:])):
        log.warning("Timings are not monotone in N, fit quality R^2 = %.4f", r2)
    return slope

def benchGrid(variants, grid, d, reps=MIN_REPS, seed=0, kernelSize=3, progress=None):
    """ Serial sweep over variants and sizes """
    results = []
    task = progress.add_task("Timing", total=len(variants) * len(grid)) if progress else None
    for variant in variants:
        for n in grid:
            results.append(timeAttention(variant, n, d, reps, seed, kernelSize))
            if progress:
                progress.advance(task)
    return results

def normalizedSpread(results) -> float:
    """ max/min of time per token over a grid, near 1 for linear cost """
    perToken = [r.median_ns / r.n for r in results]
    return max(perToken) / min(perToken) if perToken and min(perToken) > 0 else math.inf
