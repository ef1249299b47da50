"""
Softmax attention, kernel linear attention and the two-stream polarity-aware
attention, plus the value split and the depthwise value-path convolution.

All mechanisms here are single head.   Every linear variant can be evaluated in
either association order:

    quadratic   materialize the N x N weight map, then multiply by V
    linear      build the d' x d_v key/value summary, then multiply by phi(Q)

Both orders give the same answer up to rounding.
"""

import math
from typing import NamedTuple, Optional

import numpy as np

from .tensor import Matrix, Rng, asMatrix, checkFinite, matmul, rowSoftmax
from .polarity import ExponentParams, FEATURE_KINDS, initExponents, computeExponents, polarDecompose, powerMap, polaFeatureMap, baselineFeatureMap
from .Utils import ShapeError, ParameterError, DomainError

ORDERS = ['quadratic', 'linear']
DWC_MODES = ['value', 'branch']
G_INITS = ['ones', 'zeros', 'normal', 'uniform', 'kaiming']

class AttentionConfig(NamedTuple):
    n: int
    d: int
    eps: float = 1e-6
    feature_kind: str = 'pola'      # map applied to each polar part: pola, relu or elu1
    use_dwc: bool = False
    dwc_kernel_size: int = 3
    dwc_mode: str = 'value'
    alpha: float = 3.0

class PolaParams(NamedTuple):
    exps: ExponentParams
    g_same: Matrix                  # N x d/2
    g_opp: Matrix                   # N x d/2
    dwc_kernel: Optional[Matrix] = None    # d x k, one kernel per channel

class PolaCache(NamedTuple):
    """ Intermediate values of a pola forward pass, kept for the backward pass """
    p: np.ndarray
    qpair: tuple
    kpair: tuple
    qFeat: Matrix
    kSame: Matrix
    kOpp: Matrix
    vIn: Matrix
    ySame: Matrix
    yOpp: Matrix
    denSame: np.ndarray
    denOpp: np.ndarray
    summarySame: Matrix
    summaryOpp: Matrix

def validateConfig(cfg: AttentionConfig):
    if cfg.n < 1:
        raise ParameterError(f"Sequence length must be at least 1, got {cfg.n}")
    if cfg.d < 2 or cfg.d % 2:
        raise ParameterError(f"Head dimension must be even and at least 2, got {cfg.d}")
    if not cfg.eps > 0:
        raise ParameterError(f"eps must be positive, got {cfg.eps}")
    if cfg.feature_kind not in FEATURE_KINDS:
        raise ParameterError(f"Unknown feature map {cfg.feature_kind}")
    if cfg.dwc_mode not in DWC_MODES:
        raise ParameterError(f"Unknown DWC mode {cfg.dwc_mode}")
    if cfg.use_dwc and (cfg.dwc_kernel_size < 1 or cfg.dwc_kernel_size % 2 == 0):
        raise ParameterError(f"DWC kernel size must be odd, got {cfg.dwc_kernel_size}")
    if not cfg.alpha > 0:
        raise ParameterError(f"alpha must be positive, got {cfg.alpha}")
    return cfg

def identityKernel(d, k) -> Matrix:
    kernel = np.zeros((d, k))
    kernel[:, k // 2] = 1.0
    return kernel

def initCoefficients(n, half, scheme, rng: Rng = None) -> Matrix:
    match scheme:
        case 'ones':
            return np.ones((n, half))
        case 'zeros':
            return np.zeros((n, half))
        case 'normal':
            return rng.standard_normal((n, half))
        case 'uniform':
            return rng.uniform(0.0, 1.0, (n, half))
        case 'kaiming':
            bound = 1.0 / math.sqrt(half)
            return rng.uniform(-bound, bound, (n, half))
        case _:
            raise ParameterError(f"Unknown G initialization {scheme}")

def initPolaParams(cfg: AttentionConfig, rng: Rng = None, gInit='ones') -> PolaParams:
    validateConfig(cfg)
    if gInit not in ('ones', 'zeros') and rng is None:
        raise ParameterError(f"G initialization {gInit} needs a random generator")
    half = cfg.d // 2
    gSame = initCoefficients(cfg.n, half, gInit, rng)
    gOpp = initCoefficients(cfg.n, half, gInit, rng)
    kernel = identityKernel(cfg.d, cfg.dwc_kernel_size) if cfg.use_dwc else None
    return PolaParams(initExponents(cfg.d, cfg.alpha), gSame, gOpp, kernel)

def _checkQKV(q, k, v):
    q, k, v = asMatrix(q), asMatrix(k), asMatrix(v)
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"Query width {q.shape[1]} doesn't match key width {k.shape[1]}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"{k.shape[0]} keys but {v.shape[0]} values")
    return q, k, v

def _checkOrder(order):
    if order not in ORDERS:
        raise ParameterError(f"Unknown association order {order}")

def normalizeRows(num, den, eps):
    # Floor, not offset, so rows with a healthy denominator normalize exactly
    return num / np.maximum(den, eps)[:, None]

def softmaxAttention(q: Matrix, k: Matrix, v: Matrix) -> Matrix:
    q, k, v = _checkQKV(q, k, v)
    scores = matmul(q, k.T) / math.sqrt(q.shape[1])
    return matmul(rowSoftmax(scores), v)

def featureMapFor(kind, exps: ExponentParams = None):
    """
    Feature map callable for the given kind.   'pola' needs the exponent parameters.
    """
    if kind == 'pola':
        if exps is None:
            raise ParameterError("pola feature map needs exponent parameters")
        return lambda x: polaFeatureMap(x, exps)
    if kind not in FEATURE_KINDS:
        raise ParameterError(f"Unknown feature map {kind}")
    return lambda x: baselineFeatureMap(x, kind)

def _stream(qFeat, kFeat, v, order, eps):
    """
    One normalized kernel attention stream.   Returns output, denominators and the
    key/value summary (None in quadratic order).
    """
    if order == 'quadratic':
        weights = matmul(qFeat, kFeat.T)
        num = matmul(weights, v)
        den = weights.sum(axis=1)
        summary = None
    else:
        summary = matmul(kFeat.T, v)
        num = matmul(qFeat, summary)
        den = qFeat @ kFeat.sum(axis=0)
    return normalizeRows(num, den, eps), den, summary

def linearAttention(q: Matrix, k: Matrix, v: Matrix, phi, order='linear', eps=1e-6) -> Matrix:
    _checkOrder(order)
    q, k, v = _checkQKV(q, k, v)
    qFeat, kFeat = asMatrix(phi(q)), asMatrix(phi(k))
    if np.any(qFeat < 0) or np.any(kFeat < 0):
        raise DomainError("Feature map produced negative values")
    out, _, _ = _stream(qFeat, kFeat, v, order, eps)
    return checkFinite(out, "linear attention")

def polaSimilarityStreams(q: Matrix, k: Matrix, params) -> tuple[Matrix, Matrix]:
    """
    Dense same-signed and opposite-signed kernel responses (N x N each).
    Quadratic in N, for analysis only.
    """
    exps = params.exps if isinstance(params, PolaParams) else params
    p = computeExponents(exps)
    q, k = asMatrix(q), asMatrix(k)
    qp, qn = (powerMap(x, p) for x in polarDecompose(q))
    kp, kn = (powerMap(x, p) for x in polarDecompose(k))
    same = matmul(qp, kp.T) + matmul(qn, kn.T)
    opp = matmul(qp, kn.T) + matmul(qn, kp.T)
    return same, opp

def polaSimilarityDense(q: Matrix, k: Matrix, params) -> Matrix:
    same, opp = polaSimilarityStreams(q, k, params)
    return same - opp

def splitValue(v: Matrix) -> tuple[Matrix, Matrix]:
    v = asMatrix(v)
    if v.shape[1] % 2:
        raise ShapeError(f"Cannot split {v.shape[1]} value channels into equal halves")
    half = v.shape[1] // 2
    return v[:, :half].copy(), v[:, half:].copy()

def _checkKernels(kernels, channels) -> Matrix:
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim == 1:
        kernels = np.tile(kernels, (channels, 1))
    if kernels.ndim != 2 or kernels.shape[0] != channels:
        raise ShapeError(f"Need one kernel per channel ({channels}), got shape {kernels.shape}")
    if kernels.shape[1] % 2 == 0:
        raise ParameterError(f"Kernel size must be odd, got {kernels.shape[1]}")
    return kernels

def depthwiseConv1d(v: Matrix, kernels) -> Matrix:
    """
    Convolve every channel of v along the sequence with its own kernel, zero padded
    so the output keeps N rows.   Kernel tap m multiplies v[t + m - k//2].
    """
    v = asMatrix(v)
    kernels = _checkKernels(kernels, v.shape[1])
    n = v.shape[0]
    size = kernels.shape[1]
    r = size // 2
    padded = np.pad(v, ((r, r), (0, 0)))
    out = np.zeros_like(v)
    for m in range(size):
        out += kernels[:, m] * padded[m:m + n, :]
    return checkFinite(out, "depthwise convolution")

def depthwiseConv1dTranspose(dy: Matrix, kernels) -> Matrix:
    """ Adjoint of depthwiseConv1d with respect to its input """
    kernels = _checkKernels(kernels, dy.shape[1])
    return depthwiseConv1d(dy, kernels[:, ::-1])

def depthwiseKernelGrad(v: Matrix, dy: Matrix, size) -> Matrix:
    """ Gradient of <dy, depthwiseConv1d(v, K)> with respect to K """
    n = v.shape[0]
    r = size // 2
    padded = np.pad(v, ((r, r), (0, 0)))
    return np.stack([(dy * padded[m:m + n, :]).sum(axis=0) for m in range(size)], axis=1)

def convOperator(kernel, n) -> Matrix:
    """ N x N banded matrix applying one channel's kernel to a length n sequence """
    kernel = np.asarray(kernel, dtype=np.float64)
    r = kernel.size // 2
    op = np.zeros((n, n))
    for m, tap in enumerate(kernel):
        op += tap * np.eye(n, k=m - r)
    return op

def effectiveRank(m: Matrix, tol=None) -> int:
    return int(np.linalg.matrix_rank(asMatrix(m), tol=tol))

def polarFeature(part: Matrix, p, kind) -> Matrix:
    """
    Feature map applied to one polar part.   'pola' raises to the learned exponents,
    the baseline kinds ignore them.
    """
    if kind == 'pola':
        return powerMap(part, p)
    return baselineFeatureMap(part, kind)

def _checkParams(q, params: PolaParams, cfg: AttentionConfig):
    validateConfig(cfg)
    n, d = q.shape
    if d != cfg.d:
        raise ShapeError(f"Head dimension {d} doesn't match configured {cfg.d}")
    if n != cfg.n:
        raise ShapeError(f"Sequence length {n} doesn't match configured {cfg.n}")
    shape = (cfg.n, cfg.d // 2)
    if params.g_same.shape != shape or params.g_opp.shape != shape:
        raise ShapeError(f"G matrices must be {shape}, got {params.g_same.shape} and {params.g_opp.shape}")
    if cfg.use_dwc and params.dwc_kernel is None:
        raise ParameterError("DWC enabled but no kernel supplied")

def polaForward(q: Matrix, k: Matrix, v: Matrix, params: PolaParams, cfg: AttentionConfig, order='linear') -> tuple[Matrix, PolaCache]:
    _checkOrder(order)
    q, k, v = _checkQKV(q, k, v)
    _checkParams(q, params, cfg)
    if k.shape != q.shape or v.shape != q.shape:
        raise ShapeError(f"q, k and v must all be {q.shape}")

    p = computeExponents(params.exps)
    qpair = polarDecompose(q)
    kpair = polarDecompose(k)
    qFeat = np.concatenate([polarFeature(qpair.pos, p, cfg.feature_kind), polarFeature(qpair.neg, p, cfg.feature_kind)], axis=1)
    kPos, kNeg = polarFeature(kpair.pos, p, cfg.feature_kind), polarFeature(kpair.neg, p, cfg.feature_kind)
    kSame = np.concatenate([kPos, kNeg], axis=1)
    kOpp = np.concatenate([kNeg, kPos], axis=1)

    dwcValue = cfg.use_dwc and cfg.dwc_mode == 'value'
    vIn = depthwiseConv1d(v, params.dwc_kernel) if dwcValue else v
    vSame, vOpp = splitValue(vIn)

    ySame, denSame, sumSame = _stream(qFeat, kSame, vSame, order, cfg.eps)
    yOpp, denOpp, sumOpp = _stream(qFeat, kOpp, vOpp, order, cfg.eps)

    out = np.concatenate([ySame * params.g_same, yOpp * params.g_opp], axis=1)
    if cfg.use_dwc and cfg.dwc_mode == 'branch':
        out = out + depthwiseConv1d(v, params.dwc_kernel)

    cache = PolaCache(p, qpair, kpair, qFeat, kSame, kOpp, vIn, ySame, yOpp, denSame, denOpp, sumSame, sumOpp)
    return checkFinite(out, "pola attention"), cache

def polaAttention(q: Matrix, k: Matrix, v: Matrix, params: PolaParams, cfg: AttentionConfig, order='linear') -> Matrix:
    out, _ = polaForward(q, k, v, params, cfg, order)
    return out

def polaStreamWeights(q: Matrix, k: Matrix, params: PolaParams) -> tuple[Matrix, Matrix]:
    """
    Row-normalized weight maps of the same-signed and opposite-signed streams.
    Rows whose weights are all zero stay zero.
    """
    same, opp = polaSimilarityStreams(q, k, params)
    def norm(m):
        s = m.sum(axis=1, keepdims=True)
        return np.divide(m, s, out=np.zeros_like(m), where=s > 0)
    return norm(same), norm(opp)
