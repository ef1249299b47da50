#! /usr/bin/env python3
#
# PolaKit: polarity-aware linear attention, verified at desk scale.
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:
#
#     * Redistributions of source code must retain the above copyright
#       notice, this list of conditions and the following disclaimer.
#     * Redistributions in binary form must reproduce the above copyright
#       notice, this list of conditions and the following disclaimer in the
#       documentation and/or other materials provided with the distribution.
#     * Neither the name of the copyright holder nor the
#       names of its contributors may be used to endorse or promote products
#       derived from this software without specific prior written permission.
#
# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO, THE
# IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR PURPOSE
# ARE DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR CONTRIBUTORS BE
# LIABLE FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL, EXEMPLARY, OR
# CONSEQUENTIAL DAMAGES (INCLUDING, BUT NOT LIMITED TO, PROCUREMENT OF
# SUBSTITUTE GOODS OR SERVICES; LOSS OF USE, DATA, OR PROFITS; OR BUSINESS
# INTERRUPTION) HOWEVER CAUSED AND ON ANY THEORY OF LIABILITY, WHETHER IN
# CONTRACT, STRICT LIABILITY, OR TORT (INCLUDING NEGLIGENCE OR OTHERWISE)
# ARISING IN ANY WAY OUT OF THE USE OF THIS SOFTWARE, EVEN IF ADVISED OF THE
# POSSIBILITY OF SUCH DAMAGE.

import json
import math
import sys
from functools import partial
from multiprocessing import Pool

import numpy as np
from termcolor import colored

from .tensor import makeRng, gaussianMatrix, rowSoftmax
from .polarity import ExponentParams, polarDecompose, computeExponents
from .attention import (AttentionConfig, PolaParams, linearAttention, polaAttention, featureMapFor,
                        polaStreamWeights, convOperator, effectiveRank)
from .entropy import theorem1Trial, lemma2Check, pse, entropyComparison
from .gradcheck import gradientCheckReport, toyTrain, makeToyTask, gCorrelation
from .bench import benchGrid, scalingExponent, normalizedSpread
from .config import parseConfig, ExperimentConfig
from .Utils import PolaError, RecordWriter, initLogging, makeProgress, trialSeed

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_IO = 3

IDENTITY_TOL = 1e-12
EQUIVALENCE_TOL = 1e-10
ENTROPY_SHARE = 0.95

logger = None

def identityTrial(seed, maxDim, trial):
    rng = makeRng(trialSeed(seed, trial))
    dim = int(rng.integers(2, maxDim + 1))
    q = rng.standard_normal(dim)
    k = rng.standard_normal(dim)
    qp, qn = polarDecompose(q)
    kp, kn = polarDecompose(k)
    qp, qn, kp, kn = qp[0], qn[0], kp[0], kn[0]
    expanded = qp @ kp + qn @ kn - qp @ kn - qn @ kp
    error = abs(float(q @ k) - float(expanded)) / (np.linalg.norm(q) * np.linalg.norm(k))
    return {'trial': trial, 'd': dim, 'error': error, 'ok': bool(error < IDENTITY_TOL)}

def _relErr(a, b):
    scale = np.max(np.abs(a))
    return float(np.max(np.abs(a - b)) / scale) if scale > 0 else float(np.max(np.abs(a - b)))

def equivalenceTrial(seed, maxN, maxD, alpha, eps, trial):
    rng = makeRng(trialSeed(seed, trial))
    n = int(rng.integers(1, maxN + 1))
    d = 2 * int(rng.integers(1, maxD // 2 + 1))
    q, k, v = (gaussianMatrix(n, d, rng) for _ in range(3))

    relu = featureMapFor('relu')
    linErr = _relErr(linearAttention(q, k, v, relu, 'quadratic', eps), linearAttention(q, k, v, relu, 'linear', eps))

    cfg = AttentionConfig(n, d, eps=eps, alpha=alpha)
    params = PolaParams(ExponentParams(0.5 * rng.standard_normal(d), alpha),
                        rng.standard_normal((n, d // 2)), rng.standard_normal((n, d // 2)))
    polaErr = _relErr(polaAttention(q, k, v, params, cfg, 'quadratic'), polaAttention(q, k, v, params, cfg, 'linear'))

    ok = linErr < EQUIVALENCE_TOL and polaErr < EQUIVALENCE_TOL
    return {'trial': trial, 'n': n, 'd': d, 'linear_rel_err': linErr, 'pola_rel_err': polaErr, 'ok': ok}

def rankTrial(seed, n, d, alpha, kernelSize, trial):
    rng = makeRng(trialSeed(seed, trial))
    q = gaussianMatrix(n, d, rng)
    k = gaussianMatrix(n, d, rng)
    exps = ExponentParams(np.zeros(d), alpha)
    relu = featureMapFor('relu')
    reluMap = relu(q) @ relu(k).T
    same, _ = polaStreamWeights(q, k, exps)
    kernel = rng.standard_normal(kernelSize)
    return {'trial': trial, 'n': n, 'd': d,
            'rank_softmax': effectiveRank(rowSoftmax(q @ k.T / math.sqrt(d))),
            'rank_relu': effectiveRank(reluMap),
            'rank_pola': effectiveRank(same),
            'rank_pola_dwc': effectiveRank(same + convOperator(kernel, n))}

def mapTrials(fn, count, cfg: ExperimentConfig, description):
    """
    Run fn(trial) for every trial, in order, on cfg.workers processes.
    """
    with makeProgress() as pbar:
        task = pbar.add_task(description, total=count, visible=cfg.progress)
        if cfg.workers > 1:
            logger.info("Running %d trials on %d processes", count, cfg.workers)
            with Pool(cfg.workers) as pool:
                for result in pool.imap(fn, range(count), chunksize=max(1, count // (8 * cfg.workers))):
                    pbar.advance(task)
                    yield result
        else:
            for trial in range(count):
                yield fn(trial)
                pbar.advance(task)

def summary(passed, text):
    print(colored(text, 'green' if passed else 'red'))
    return EXIT_OK if passed else EXIT_VIOLATION

def runIdentity(cfg, out):
    writer = RecordWriter(out, cfg.format, ['trial', 'd', 'error', 'ok'])
    good = 0
    for record in mapTrials(partial(identityTrial, cfg.seed, cfg.d), cfg.trials, cfg, "Identity"):
        writer.write(record)
        good += record['ok']
    return summary(good == cfg.trials, f"{good}/{cfg.trials} reconstructions within {IDENTITY_TOL:g}")

def runEquivalence(cfg, out):
    writer = RecordWriter(out, cfg.format, ['trial', 'n', 'd', 'linear_rel_err', 'pola_rel_err', 'ok'])
    good = 0
    worst = 0.0
    fn = partial(equivalenceTrial, cfg.seed, cfg.n, cfg.d, cfg.alpha, cfg.eps)
    for record in mapTrials(fn, cfg.trials, cfg, "Equivalence"):
        writer.write(record)
        good += record['ok']
        worst = max(worst, record['linear_rel_err'], record['pola_rel_err'])
    return summary(good == cfg.trials, f"equivalent: {good}/{cfg.trials} within {EQUIVALENCE_TOL:g} (worst {worst:.3g})")

def runEntropy(cfg, out):
    fields = ['trial', 'n', 'd', 'pse_softmax', 'pse_relu', 'pse_elu1', 'pse_pola_dense', 'pse_pola_same', 'opposite_share', 'pola_below_relu']
    writer = RecordWriter(out, cfg.format, fields)
    below = softBelow = 0
    for record in mapTrials(partial(entropyComparison, cfg.seed, n=cfg.n, d=cfg.d, alpha=cfg.alpha), cfg.trials, cfg, "Entropy"):
        writer.write(record)
        below += record['pola_below_relu']
        softBelow += record['pse_softmax'] < record['pse_relu']
    logger.info("softmax below ReLU-linear in %d/%d instances", softBelow, cfg.trials)
    return summary(below >= ENTROPY_SHARE * cfg.trials, f"pola below relu: {below}/{cfg.trials}, softmax below relu: {softBelow}/{cfg.trials}")

def runTheorem(cfg, out):
    writer = RecordWriter(out, cfg.format, ['alpha', 'trial', 'pse_before', 'pse_after', 'reduced', 'constant', 'excluded'])
    status = EXIT_OK
    for alpha in cfg.alphas or (cfg.alpha,):
        reduced = nonConstant = 0
        fn = partial(_theoremRecord, cfg.seed, cfg.n, cfg.d, alpha)
        for record in mapTrials(fn, cfg.trials, cfg, f"Theorem alpha={alpha:g}"):
            writer.write(record)
            reduced += record['reduced']
            nonConstant += not record['constant']
        status = max(status, summary(reduced == nonConstant, f"alpha {alpha:g} reduced: {reduced}/{nonConstant}"))

    # Closed forms for the pair (2, 1) squared
    hBefore, hAfter = lemma2Check(2.0, 1.0, 2.0)
    closed = (abs(pse([2.0, 1.0]) - (math.log(3) - 2 / 3 * math.log(2))) < 1e-12 and
              abs(pse([4.0, 1.0]) - (math.log(5) - 0.8 * math.log(4))) < 1e-12 and
              abs(hBefore - pse([2.0, 1.0])) < 1e-12 and abs(hAfter - pse([4.0, 1.0])) < 1e-12)
    return max(status, summary(closed, f"closed forms: h(2)={hBefore:.6f} h(4)={hAfter:.6f}"))

def _theoremRecord(seed, n, d, alpha, trial):
    r = theorem1Trial(seed, trial, n, d, alpha)
    return {'alpha': alpha, 'trial': trial, **r._asdict()}

def _attentionConfig(cfg):
    return AttentionConfig(cfg.n, cfg.d, eps=cfg.eps, use_dwc=cfg.use_dwc, dwc_kernel_size=cfg.dwc_kernel_size,
                           dwc_mode=cfg.dwc_mode, alpha=cfg.alpha, feature_kind=cfg.feature_kind)

def runGradcheck(cfg, out):
    attCfg = _attentionConfig(cfg)
    writer = RecordWriter(out, cfg.format, ['trial', 'group', 'max_rel_err', 'index', 'passed'])
    passed = 0
    worst = {}
    for trial in range(cfg.trials):
        report = gradientCheckReport(attCfg, trialSeed(cfg.seed, trial), h=cfg.h, tol=cfg.tol, strict=False)
        for group, err in report.max_rel_err.items():
            writer.write({'trial': trial, 'group': group, 'max_rel_err': err,
                          'index': ":".join(map(str, report.worst_index[group])), 'passed': err < cfg.tol})
            worst[group] = max(worst.get(group, 0.0), err)
        for group, index, a, b, err in report.failures:
            logger.warning("Trial %d group %s%s: analytic %.8g numeric %.8g (error %.3g)", trial, group, list(index), a, b, err)
        passed += report.passed
    groups = " ".join(f"{g}={e:.2g}" for g, e in worst.items())
    return summary(passed == cfg.trials, f"gradient check: {passed}/{cfg.trials} within {cfg.tol:g}; worst {groups}")

def runBench(cfg, out):
    fields = ['variant', 'n', 'd', 'reps', 'median_ns', 'flops_model', 'flops_model_dprime_d']
    writer = RecordWriter(out, cfg.format, fields)
    with makeProgress() as pbar:
        results = benchGrid(cfg.variants, cfg.grid, cfg.d, cfg.reps, cfg.seed, cfg.dwc_kernel_size, pbar if cfg.progress else None)
    for r in results:
        writer.write({'variant': r.variant, 'n': r.n, 'd': r.d, 'reps': r.reps, 'median_ns': r.median_ns,
                      'flops_model': r.flop_model, 'flops_model_dprime_d': r.flop_model_dprime_d})

    parts = []
    for variant in cfg.variants:
        rows = [r for r in results if r.variant == variant]
        try:
            parts.append(f"{variant} exponent {scalingExponent(rows):.2f} (per-token spread {normalizedSpread(rows):.2f})")
        except PolaError as exc:
            logger.info("No scaling fit for %s: %s", variant, exc)
    return summary(True, f"bench: {len(results)} rows; " + "; ".join(parts))

def runTrainToy(cfg, out):
    attCfg = _attentionConfig(cfg)
    task = partial(makeToyTask, cfg.task, cfg.n, cfg.d)
    result = toyTrain(task, cfg.steps, cfg.lr, cfg.seed, attCfg, cfg.g_init, loss=cfg.loss)

    writer = RecordWriter(out, cfg.format, ['step', 'loss'])
    for step, loss in enumerate(result.losses):
        writer.write({'step': step, 'loss': loss})

    p = computeExponents(result.params.exps)
    p0 = computeExponents(result.initial.exps)
    corr = gCorrelation(result.params)
    ratio = result.losses[-1] / result.losses[0] if result.losses[0] > 0 else 0.0

    params = {'alpha': cfg.alpha, 'w': result.params.exps.w.tolist(), 'p': p.tolist(),
              'g_same': result.params.g_same.tolist(), 'g_opp': result.params.g_opp.tolist(),
              'g_correlation': None if math.isnan(corr) else corr,
              'initial_loss': result.losses[0], 'final_loss': result.losses[-1]}
    if result.params.dwc_kernel is not None:
        params['dwc_kernel'] = result.params.dwc_kernel.tolist()
    paramPath = cfg.output.with_name(cfg.output.stem + '.params.json')
    with open(paramPath, 'w', encoding='utf-8') as f:
        json.dump(params, f, indent=2)
        f.write("\n")

    inBox = bool(np.all((p > 1.0) & (p < 1.0 + cfg.alpha)))
    gMoved = not (np.array_equal(result.params.g_same, result.initial.g_same) and np.array_equal(result.params.g_opp, result.initial.g_opp))
    pMoved = bool(np.max(np.abs(p - p0)) > 1e-3)
    passed = ratio <= cfg.target_ratio and inBox and gMoved
    logger.info("exponents moved: %s, max change %.4g", pMoved, np.max(np.abs(p - p0)))
    return summary(passed, f"loss {result.losses[0]:.6g} -> {result.losses[-1]:.6g} (ratio {ratio:.3f}); "
                           f"p in [{p.min():.4f}, {p.max():.4f}]; G correlation {corr:.4f}")

def runRank(cfg, out):
    writer = RecordWriter(out, cfg.format, ['trial', 'n', 'd', 'rank_softmax', 'rank_relu', 'rank_pola', 'rank_pola_dwc'])
    totals = np.zeros(4)
    fn = partial(rankTrial, cfg.seed, cfg.n, cfg.d, cfg.alpha, cfg.dwc_kernel_size)
    for record in mapTrials(fn, cfg.trials, cfg, "Rank"):
        writer.write(record)
        totals += [record['rank_softmax'], record['rank_relu'], record['rank_pola'], record['rank_pola_dwc']]
    means = totals / cfg.trials
    return summary(True, f"mean rank: softmax {means[0]:.1f}, relu {means[1]:.1f}, pola {means[2]:.1f}, pola+dwc {means[3]:.1f} (n={cfg.n})")

RUNNERS = {
    'identity': runIdentity,
    'equivalence': runEquivalence,
    'entropy': runEntropy,
    'theorem': runTheorem,
    'gradcheck': runGradcheck,
    'bench': runBench,
    'train-toy': runTrainToy,
    'rank': runRank,
}

def runExperiment(cfg: ExperimentConfig) -> int:
    global logger
    if logger is None:
        logger = initLogging(cfg.verbose)

    try:
        cfg.output.parent.mkdir(parents=True, exist_ok=True)
        out = open(cfg.output, 'w', newline='', encoding='utf-8')
    except OSError as exc:
        logger.error("Cannot write %s: %s", cfg.output, exc)
        return EXIT_IO

    try:
        with out:
            status = RUNNERS[cfg.command](cfg, out)
    except OSError as exc:
        logger.error("I/O error writing results: %s", exc)
        return EXIT_IO
    except PolaError as exc:
        logger.error("%s", exc)
        return EXIT_VIOLATION

    logger.info("Wrote %s", cfg.output)
    return status

def main(argv=None) -> int:
    global logger
    cfg = parseConfig(argv)
    logger = initLogging(cfg.verbose)
    return runExperiment(cfg)

def run():
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        sys.exit("Interrupted")

if __name__ == "__main__":
    run()
