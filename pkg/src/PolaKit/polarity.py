"""
Polarity decomposition and the feature maps built on it.
"""

from typing import NamedTuple

import numpy as np

from .tensor import Matrix, asMatrix, checkFinite
from .Utils import ParameterError, DomainError

FEATURE_KINDS = ['pola', 'relu', 'elu1']

class ExponentParams(NamedTuple):
    w: np.ndarray           # learnable logits, one per channel
    alpha: float = 3.0

class PolarPair(NamedTuple):
    pos: Matrix
    neg: Matrix

def initExponents(d, alpha=3.0) -> ExponentParams:
    # w = 0 puts every exponent at the midpoint 1 + alpha/2
    return ExponentParams(np.zeros(d), float(alpha))

def sigmoid(w):
    w = np.asarray(w, dtype=np.float64)
    e = np.exp(-np.abs(w))
    return np.where(w >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

def polarDecompose(x: Matrix) -> PolarPair:
    x = checkFinite(asMatrix(x), "polarity input")
    return PolarPair(np.maximum(x, 0.0), np.maximum(-x, 0.0))

def computeExponents(params: ExponentParams) -> np.ndarray:
    if not params.alpha > 0:
        raise ParameterError(f"alpha must be positive, got {params.alpha}")
    return 1.0 + params.alpha * sigmoid(params.w)

def powerMap(x: Matrix, p) -> Matrix:
    """
    Raise column j of x to the power p[j].   Computed as exp(p ln x), with 0 mapped to 0.
    """
    x = asMatrix(x)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (x.shape[1],):
        raise ParameterError(f"Need {x.shape[1]} exponents, got shape {p.shape}")
    if np.any(p < 1.0):
        raise ParameterError("Exponents must be at least 1")
    if np.any(x < 0):
        raise DomainError("Power map is only defined on non-negative inputs")

    pos = x > 0
    logs = np.log(np.where(pos, x, 1.0))
    return checkFinite(np.where(pos, np.exp(p * logs), 0.0), "power map")

def featuresFromExponents(x: Matrix, p) -> Matrix:
    pair = polarDecompose(x)
    return np.concatenate([powerMap(pair.pos, p), powerMap(pair.neg, p)], axis=1)

def polaFeatureMap(x: Matrix, params: ExponentParams) -> Matrix:
    """
    Columns 0..d-1 hold g(x+; p), columns d..2d-1 hold g(x-; p).
    """
    return featuresFromExponents(x, computeExponents(params))

def baselineFeatureMap(x: Matrix, kind) -> Matrix:
    x = checkFinite(asMatrix(x), "feature map input")
    match kind:
        case 'relu':
            return np.maximum(x, 0.0)
        case 'elu1':
            return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
        case _:
            raise ParameterError(f"Unknown feature map: {kind}")
