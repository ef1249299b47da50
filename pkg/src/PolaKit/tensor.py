"""
Dense float64 matrices and seeded random generation.

A Matrix is a 2-D C-ordered numpy array of dtype float64.   Nothing here mutates
its inputs.
"""

import numpy as np
import numpy.typing as npt

from .Utils import ShapeError, ParameterError, DomainError

Matrix = npt.NDArray[np.float64]
Rng = np.random.Generator

# Philox-4x64 (counter based, 10 rounds).   Never change this, stored results depend on it.
RNG_ALGORITHM = "Philox-4x64-10"

def makeRng(seed) -> Rng:
    """
    Seed may be an int or a numpy SeedSequence.
    """
    if isinstance(seed, (int, np.integer)):
        if seed < 0 or seed >= 2**64:
            raise ParameterError(f"Seed {seed} is not a 64 bit unsigned value")
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))

def asMatrix(x) -> Matrix:
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got {m.ndim} dimensions")
    return m

def checkFinite(m, what="result"):
    if not np.all(np.isfinite(m)):
        raise DomainError(f"Non-finite value in {what}")
    return m

def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    return checkFinite(a @ b, "matrix product")

def rowSoftmax(m: Matrix) -> Matrix:
    checkFinite(m, "softmax input")
    # work in place on our own copy, the N x N maps get large
    e = m - m.max(axis=1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=1, keepdims=True)
    return e

def gaussianMatrix(rows, cols, rng: Rng) -> Matrix:
    if rows < 1 or cols < 1:
        raise ShapeError(f"Matrix dimensions must be positive, got {rows}x{cols}")
    return rng.standard_normal((rows, cols))
