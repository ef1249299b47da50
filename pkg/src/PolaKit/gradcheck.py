"""
Backward pass of the pola attention block, a central difference oracle to
check it against, and a small gradient descent loop on toy tasks.
"""

import math
from typing import NamedTuple, Optional

import colorlog
import numpy as np

from .tensor import Matrix, makeRng, gaussianMatrix, asMatrix
from .polarity import ExponentParams, sigmoid
from .attention import (AttentionConfig, PolaParams, polaForward, polaAttention, initPolaParams, validateConfig,
                        depthwiseConv1dTranspose, depthwiseKernelGrad)
from .Utils import ShapeError, ParameterError, DomainError, OracleFailure, PropertyViolation, TrainingDivergence

log = colorlog.getLogger('polakit.gradcheck')

TASK_KINDS = ['associative-recall', 'copy']
LOSS_MODES = ['mean', 'sum']
REL_FLOOR = 1e-8
KINK_MARGIN = 3.0       # q, k coordinates within KINK_MARGIN * sqrt(h) of 0 are not checked

class Gradients(NamedTuple):
    d_q: Matrix
    d_k: Matrix
    d_v: Matrix
    d_w: np.ndarray
    d_g_same: Matrix
    d_g_opp: Matrix
    d_dwc: Optional[Matrix] = None

class ToyTaskInstance(NamedTuple):
    inputs: Matrix
    targets: Matrix
    kind: str

class GradCheckReport(NamedTuple):
    max_rel_err: dict       # group -> worst relative error
    worst_index: dict       # group -> coordinate of the worst error
    failures: list          # (group, index, analytic, numeric, error)
    passed: bool

class TrainResult(NamedTuple):
    losses: list            # losses[0] is the initial loss, one more per step
    params: PolaParams
    initial: PolaParams

def _powerBack(x, g, dg, p):
    """
    Back through g = x^p (column exponents).   Returns (dx, dp), with 0 at x = 0
    for both, the limit for p > 1.
    """
    pos = x > 0
    safe = np.where(pos, x, 1.0)
    dx = np.where(pos, dg * p * g / safe, 0.0)
    dp = np.where(pos, dg * g * np.log(safe), 0.0).sum(axis=0)
    return dx, dp

def _featureBack(x, g, dg, p, kind):
    if kind == 'pola':
        return _powerBack(x, g, dg, p)
    # relu and elu1 both have slope 1 on a non-negative part, and no exponents
    return dg, np.zeros_like(p)

def _streamBack(dY, y, den, qFeat, kFeat, vPart, eps):
    live = den > eps
    denom = np.maximum(den, eps)
    dNum = dY / denom[:, None]
    dDen = np.where(live, -(dY * y).sum(axis=1) / denom, 0.0)

    summary = kFeat.T @ vPart
    z = kFeat.sum(axis=0)
    dQFeat = dNum @ summary.T + np.outer(dDen, z)
    dSummary = qFeat.T @ dNum
    dz = qFeat.T @ dDen
    dKFeat = vPart @ dSummary.T + dz[None, :]
    dV = kFeat @ dSummary
    return dQFeat, dKFeat, dV

def polaBackward(q: Matrix, k: Matrix, v: Matrix, params: PolaParams, cfg: AttentionConfig, upstream: Matrix) -> Gradients:
    """
    Exact gradients of <upstream, polaAttention(q, k, v)> with respect to the inputs
    and every learnable parameter.
    """
    q, k, v = asMatrix(q), asMatrix(k), asMatrix(v)
    out, cache = polaForward(q, k, v, params, cfg, 'linear')
    upstream = asMatrix(upstream)
    if upstream.shape != out.shape:
        raise ShapeError(f"Upstream gradient is {upstream.shape}, output is {out.shape}")

    d = cfg.d
    half = d // 2
    p = cache.p
    uSame, uOpp = upstream[:, :half], upstream[:, half:]

    dGSame = uSame * cache.ySame
    dGOpp = uOpp * cache.yOpp

    vSame, vOpp = cache.vIn[:, :half], cache.vIn[:, half:]
    dQs, dKs, dVs = _streamBack(uSame * params.g_same, cache.ySame, cache.denSame, cache.qFeat, cache.kSame, vSame, cfg.eps)
    dQo, dKo, dVo = _streamBack(uOpp * params.g_opp, cache.yOpp, cache.denOpp, cache.qFeat, cache.kOpp, vOpp, cfg.eps)

    dQFeat = dQs + dQo
    dKPos = dKs[:, :d] + dKo[:, d:]
    dKNeg = dKs[:, d:] + dKo[:, :d]

    qPos, qNeg = cache.qpair
    kPos, kNeg = cache.kpair
    gQPos, gQNeg = cache.qFeat[:, :d], cache.qFeat[:, d:]
    gKPos, gKNeg = cache.kSame[:, :d], cache.kSame[:, d:]

    kind = cfg.feature_kind
    dxQPos, dp1 = _featureBack(qPos, gQPos, dQFeat[:, :d], p, kind)
    dxQNeg, dp2 = _featureBack(qNeg, gQNeg, dQFeat[:, d:], p, kind)
    dxKPos, dp3 = _featureBack(kPos, gKPos, dKPos, p, kind)
    dxKNeg, dp4 = _featureBack(kNeg, gKNeg, dKNeg, p, kind)

    # ReLU subgradient at exactly 0 is taken as 0
    dq = np.where(q > 0, dxQPos, 0.0) - np.where(q < 0, dxQNeg, 0.0)
    dk = np.where(k > 0, dxKPos, 0.0) - np.where(k < 0, dxKNeg, 0.0)

    s = sigmoid(params.exps.w)
    dw = (dp1 + dp2 + dp3 + dp4) * params.exps.alpha * s * (1.0 - s)

    dvIn = np.concatenate([dVs, dVo], axis=1)
    dDwc = None
    if cfg.use_dwc and cfg.dwc_mode == 'value':
        dv = depthwiseConv1dTranspose(dvIn, params.dwc_kernel)
        dDwc = depthwiseKernelGrad(v, dvIn, params.dwc_kernel.shape[1])
    elif cfg.use_dwc:
        dv = dvIn + depthwiseConv1dTranspose(upstream, params.dwc_kernel)
        dDwc = depthwiseKernelGrad(v, upstream, params.dwc_kernel.shape[1])
    else:
        dv = dvIn

    return Gradients(dq, dk, dv, dw, dGSame, dGOpp, dDwc)

def finiteDiffGrad(lossFn, point, h=1e-5):
    """
    Central differences (f(x+h) - f(x-h)) / 2h for every coordinate.

    point is either an array (or scalar), or a dict of named arrays; lossFn takes the
    same kind of object.   The result mirrors point.
    """
    if not h > 0:
        raise ParameterError(f"Step must be positive, got {h}")

    single = not isinstance(point, dict)
    groups = {'x': np.array(point, dtype=np.float64)} if single else {name: np.array(val, dtype=np.float64) for name, val in point.items()}

    def evaluate(name, index):
        value = float(lossFn(groups['x'] if single else groups))
        if not math.isfinite(value):
            raise OracleFailure(f"Loss is not finite perturbing {name}{list(index)}", name, index)
        return value

    grads = {}
    for name, arr in groups.items():
        grad = np.zeros_like(arr)
        for index in np.ndindex(arr.shape):
            orig = arr[index]
            arr[index] = orig + h
            up = evaluate(name, index)
            arr[index] = orig - h
            down = evaluate(name, index)
            arr[index] = orig
            grad[index] = (up - down) / (2 * h)
        grads[name] = grad

    return grads['x'] if single else grads

def relativeError(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)

def _paramsFromPoint(point, params: PolaParams) -> PolaParams:
    return PolaParams(ExponentParams(point['w'], params.exps.alpha), point['g_same'], point['g_opp'],
                      point.get('dwc', params.dwc_kernel))

def randomInstance(cfg: AttentionConfig, seed):
    """ Random q, k, v, parameters and upstream gradient for a gradient check """
    rng = makeRng(seed)
    n, d = cfg.n, cfg.d
    q, k, v = (gaussianMatrix(n, d, rng) for _ in range(3))
    upstream = gaussianMatrix(n, d, rng)
    base = initPolaParams(cfg)
    w = 0.5 * rng.standard_normal(d)
    gSame = 1.0 + 0.1 * rng.standard_normal((n, d // 2))
    gOpp = 1.0 + 0.1 * rng.standard_normal((n, d // 2))
    kernel = base.dwc_kernel
    if kernel is not None:
        kernel = kernel + 0.1 * rng.standard_normal(kernel.shape)
    return q, k, v, PolaParams(ExponentParams(w, cfg.alpha), gSame, gOpp, kernel), upstream

def gradientCheckReport(cfg: AttentionConfig, seed, h=1e-5, tol=1e-5, strict=True) -> GradCheckReport:
    validateConfig(cfg)
    q, k, v, params, upstream = randomInstance(cfg, seed)
    grads = polaBackward(q, k, v, params, cfg, upstream)

    point = {'q': q, 'k': k, 'v': v, 'w': params.exps.w, 'g_same': params.g_same, 'g_opp': params.g_opp}
    analytic = {'q': grads.d_q, 'k': grads.d_k, 'v': grads.d_v, 'w': grads.d_w, 'g_same': grads.d_g_same, 'g_opp': grads.d_g_opp}
    if cfg.use_dwc:
        point['dwc'] = params.dwc_kernel
        analytic['dwc'] = grads.d_dwc

    def loss(pt):
        out = polaAttention(pt['q'], pt['k'], pt['v'], _paramsFromPoint(pt, params), cfg)
        return np.sum(upstream * out)

    numeric = finiteDiffGrad(loss, point, h)

    maxErr, worst, failures = {}, {}, []
    for group, a in analytic.items():
        err = relativeError(a, numeric[group])
        if group in ('q', 'k'):
            # x^p has unbounded higher derivatives at the kink, truncation error grows like (h/x)^2
            err = np.where(np.abs(point[group]) <= KINK_MARGIN * math.sqrt(h), 0.0, err)
        index = np.unravel_index(int(np.argmax(err)), err.shape)
        maxErr[group] = float(err[index])
        worst[group] = tuple(int(i) for i in index)
        if err[index] >= tol:
            failures.append((group, worst[group], float(a[index]), float(numeric[group][index]), maxErr[group]))
        log.debug("Group %s: max relative error %.3g at %s", group, maxErr[group], worst[group])

    report = GradCheckReport(maxErr, worst, failures, not failures)
    if strict and failures:
        desc = ", ".join(f"{g}{list(i)} analytic {a:.6g} numeric {b:.6g} error {e:.3g}" for g, i, a, b, e in failures)
        raise PropertyViolation(f"Gradient check failed: {desc}")
    return report

def makeToyTask(kind, n, d, seed) -> ToyTaskInstance:
    """
    associative-recall: the first n/2 rows store [a_i; b_i], the next n/2 rows are
    queries [a_i; 0] whose target is the stored [a_i; b_i].   Store rows target
    themselves.

    copy: target equals input.
    """
    if d < 2 or d % 2:
        raise ParameterError(f"Head dimension must be even and at least 2, got {d}")
    rng = makeRng(seed)
    half = d // 2
    match kind:
        case 'copy':
            inputs = gaussianMatrix(n, d, rng)
            return ToyTaskInstance(inputs, inputs.copy(), kind)
        case 'associative-recall':
            pairs = n // 2
            inputs = gaussianMatrix(n, d, rng)
            targets = inputs.copy()
            if pairs:
                keys = gaussianMatrix(pairs, half, rng)
                values = gaussianMatrix(pairs, half, rng)
                store = np.concatenate([keys, values], axis=1)
                inputs[:pairs] = store
                inputs[pairs:2 * pairs] = np.concatenate([keys, np.zeros_like(values)], axis=1)
                targets[:pairs] = store
                targets[pairs:2 * pairs] = store
            return ToyTaskInstance(inputs, targets, kind)
        case _:
            raise ParameterError(f"Unknown toy task {kind}")

def sequenceLoss(out, targets, mode='sum') -> float:
    """ Squared error, summed or averaged over all n * d entries """
    match mode:
        case 'sum':
            return float(np.sum((out - targets) ** 2))
        case 'mean':
            return float(np.mean((out - targets) ** 2))
        case _:
            raise ParameterError(f"Unknown loss mode {mode}")

def toyTrain(task, steps, lr, seed, cfg: AttentionConfig = None, gInit='ones', params: PolaParams = None,
             loss='mean') -> TrainResult:
    """
    Plain gradient descent on the squared error of the block output, with
    q = k = v = task inputs.   task is a ToyTaskInstance or a callable seed -> instance.

    loss is 'mean' (MSE) or 'sum'.   The two give the same trajectory when the
    mean mode learning rate is n * d times the sum mode one.
    """
    if loss not in LOSS_MODES:
        raise ParameterError(f"Unknown loss mode {loss}")
    if not lr > 0:
        raise ParameterError(f"Learning rate must be positive, got {lr}")
    if steps < 1:
        raise ParameterError(f"Need at least one step, got {steps}")

    instance = task(seed) if callable(task) else task
    x, targets = instance.inputs, instance.targets
    n, d = x.shape
    if cfg is None:
        cfg = AttentionConfig(n, d)
    if params is None:
        params = initPolaParams(cfg, makeRng(seed), gInit)
    initial = params

    losses = []
    for step in range(steps + 1):
        try:
            out = polaAttention(x, x, x, params, cfg)
        except DomainError as exc:
            raise TrainingDivergence(f"Output diverged at step {step}: {exc}", step) from exc
        value = sequenceLoss(out, targets, loss)
        if not math.isfinite(value):
            raise TrainingDivergence(f"Loss diverged at step {step}", step)
        losses.append(value)
        log.debug("Step %d loss %.6g", step, value)
        if step == steps:
            break

        upstream = 2.0 * (out - targets)
        if loss == 'mean':
            upstream /= out.size
        grads = polaBackward(x, x, x, params, cfg, upstream)
        # q, k and v are the same matrix here, but the inputs are not trained
        w = params.exps.w - lr * grads.d_w
        kernel = params.dwc_kernel
        if grads.d_dwc is not None:
            kernel = kernel - lr * grads.d_dwc
        params = PolaParams(ExponentParams(w, params.exps.alpha),
                            params.g_same - lr * grads.d_g_same,
                            params.g_opp - lr * grads.d_g_opp,
                            kernel)

    log.info("Trained %d steps: loss %.6g -> %.6g", steps, losses[0], losses[-1])
    return TrainResult(losses, params, initial)

def gCorrelation(params: PolaParams) -> float:
    """ Pearson correlation between the flattened G^s and G^o, NaN if either is constant """
    a, b = params.g_same.ravel(), params.g_opp.ravel()
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])
