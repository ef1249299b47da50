"""
Positive sequence entropy (PSE) and numerical checks of the entropy reduction
results for power feature maps.

All entropies are in nats.
"""

import math
from typing import NamedTuple

import colorlog
import numpy as np

from .tensor import Matrix, asMatrix, makeRng, rowSoftmax, gaussianMatrix
from .polarity import ExponentParams, initExponents, computeExponents, powerMap, polarDecompose, baselineFeatureMap
from .attention import polaSimilarityDense, polaSimilarityStreams
from .Utils import DomainError, ParameterError, trialSeed

log = colorlog.getLogger('polakit.entropy')

class EntropyReport(NamedTuple):
    per_row: np.ndarray         # NaN where the row is undefined
    mean: float
    max: float
    min: float
    undefined: np.ndarray       # True for rows that were all zero

class TheoremReport(NamedTuple):
    pse_before: float
    pse_after: float
    reduced: bool
    constant: bool = False
    excluded: int = 0

def pse(x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise DomainError("PSE needs a finite non-negative sequence")
    s = x.sum()
    if not s > 0:
        raise DomainError("PSE is undefined for an all-zero sequence")
    share = x[x > 0] / s
    return float(-np.sum(share * np.log(share)))

def _hFromLog(logRatio) -> float:
    # h in terms of L = |ln c|, finite for any ratio that fits in a float
    t = math.exp(-logRatio)
    return math.log1p(t) + logRatio * t / (1.0 + t)

def hFunction(c) -> float:
    """ PSE of the two element sequence (c, 1) """
    if not c > 0:
        raise DomainError(f"Ratio must be positive, got {c}")
    return _hFromLog(abs(math.log(c)))

def rowEntropyProfile(attn: Matrix, clampNegative=False) -> EntropyReport:
    attn = asMatrix(attn)
    if clampNegative:
        attn = np.maximum(attn, 0.0)
    elif np.any(attn < 0):
        raise DomainError("Attention map has negative entries, use clampNegative")

    values = np.full(attn.shape[0], np.nan)
    undefined = attn.sum(axis=1) <= 0
    for i, row in enumerate(attn):
        if not undefined[i]:
            values[i] = pse(row)

    if undefined.any():
        log.debug("%d of %d rows are all zero, excluded from summary", undefined.sum(), len(values))
    defined = values[~undefined]
    if defined.size == 0:
        return EntropyReport(values, math.nan, math.nan, math.nan, undefined)
    return EntropyReport(values, float(defined.mean()), float(defined.max()), float(defined.min()), undefined)

def theorem1Check(x, ys, exps: ExponentParams) -> TheoremReport:
    """
    Compare PSE(<x, y^n>) with PSE(<g(x), g(y^n)>) for the power map g.
    Pairs with a zero inner product are dropped.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    ys = asMatrix(ys)
    if ys.shape[1] != x.size:
        raise DomainError(f"x has {x.size} dimensions, ys have {ys.shape[1]}")
    if np.any(x < 0) or np.any(ys < 0):
        raise DomainError("Entropy reduction check needs non-negative vectors")

    p = computeExponents(exps)
    before = ys @ x
    after = powerMap(ys, p) @ powerMap(x.reshape(1, -1), p).ravel()

    keep = (before > 0) & (after > 0)
    excluded = int((~keep).sum())
    if excluded:
        log.warning("Excluding %d of %d pairs with a zero inner product", excluded, keep.size)
    if not keep.any():
        raise DomainError("Every inner product is zero")
    before, after = before[keep], after[keep]

    pBefore, pAfter = pse(before), pse(after)
    constant = bool(np.ptp(before) == 0)
    return TheoremReport(pBefore, pAfter, (not constant) and pAfter < pBefore, constant, excluded)

def theorem1Trial(seed, trial, n, d, alpha) -> TheoremReport:
    """ One Monte-Carlo trial on half-normal vectors, exponents at their initial value """
    rng = makeRng(trialSeed(seed, trial))
    x = np.abs(rng.standard_normal(d))
    ys = np.abs(gaussianMatrix(n, d, rng))
    return theorem1Check(x, ys, initExponents(d, alpha))

def lemma2Check(a, b, p) -> tuple[float, float]:
    """
    Entropy of the pair (a, b) before and after x -> x^p, through the ratio c = max/min.
    """
    if not (a > 0 and b > 0):
        raise DomainError("Lemma check needs positive values")
    if not p > 1:
        raise ParameterError(f"Exponent must exceed 1, got {p}")
    if a == b:
        return math.log(2.0), math.log(2.0)
    logRatio = abs(math.log(a) - math.log(b))
    return _hFromLog(logRatio), _hFromLog(p * logRatio)

def entropyComparison(seed, trial, n, d, alpha) -> dict:
    """
    Mean row PSE of the maps each mechanism builds from the same random Q, K.
    The pola dense map is clamped at zero, the others are non-negative already.
    """
    rng = makeRng(trialSeed(seed, trial))
    q = gaussianMatrix(n, d, rng)
    k = gaussianMatrix(n, d, rng)
    exps = initExponents(d, alpha)

    maps = {
        'softmax': rowSoftmax(q @ k.T / math.sqrt(d)),
        'relu': baselineFeatureMap(q, 'relu') @ baselineFeatureMap(k, 'relu').T,
        'elu1': baselineFeatureMap(q, 'elu1') @ baselineFeatureMap(k, 'elu1').T,
        'pola_dense': polaSimilarityDense(q, k, exps),
        'pola_same': polaSimilarityStreams(q, k, exps)[0],
    }
    record = {'trial': trial, 'n': n, 'd': d}
    for name, m in maps.items():
        record[f"pse_{name}"] = rowEntropyProfile(m, clampNegative=(name == 'pola_dense')).mean

    # Share of |q.k| carried by opposite-signed terms, which a ReLU map throws away
    qp, qn = polarDecompose(q)
    kp, kn = polarDecompose(k)
    same = qp @ kp.T + qn @ kn.T
    opp = qp @ kn.T + qn @ kp.T
    record['opposite_share'] = float(opp.sum() / (same.sum() + opp.sum()))
    record['pola_below_relu'] = bool(record['pse_pola_dense'] < record['pse_relu'])
    return record
