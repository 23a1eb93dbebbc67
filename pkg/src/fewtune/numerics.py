"""Dense float64 matrix helpers, seeded randomness, and a finite-difference oracle.

Matrices are plain 2-D ``numpy.ndarray`` values in float64. Randomness comes
from numpy's PCG64 generator seeded through ``SeedSequence``; independent
child streams are derived from a (seed, index path) pair so that parallel
work can be reproduced exactly regardless of scheduling order.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import NumericError, UsageError


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a float64 2-D array, rejecting non-finite entries."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise UsageError(f"{name} must be 2-D, got shape {a.shape}")
    ensure_finite(a, name)
    return a


def check_matrix(a: np.ndarray, name: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate an existing matrix against an expected shape."""
    if not isinstance(a, np.ndarray) or a.ndim != 2:
        raise UsageError(f"{name} must be a 2-D array")
    if rows is not None and a.shape[0] != rows:
        raise UsageError(f"{name} has {a.shape[0]} rows, expected {rows}")
    if cols is not None and a.shape[1] != cols:
        raise UsageError(f"{name} has {a.shape[1]} columns, expected {cols}")
    return a


def ensure_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    Accumulates in float64; raises ``UsageError`` naming both shapes on a
    dimension mismatch.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise UsageError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise UsageError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def make_rng(seed: int) -> np.random.Generator:
    """Root PCG64 stream for a run."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def child_rng(seed: int, *path: int) -> np.random.Generator:
    """Independent child stream identified by (seed, index path).

    Children with distinct paths are independent by SeedSequence
    construction and do not depend on the order they are created in,
    which is what makes parallel evaluation reproducible.
    """
    if not path:
        raise UsageError("child_rng needs at least one index")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(p) for p in path)))


def kaiming_uniform_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform init on [-1/sqrt(cols), +1/sqrt(cols)].

    The bound follows the default linear-layer initialization of common
    deep-learning frameworks, where ``cols`` is the layer's input width.
    """
    if rows < 1 or cols < 1:
        raise UsageError(f"init shape must be positive, got ({rows}, {cols})")
    bound = 1.0 / math.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], at: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar loss over one matrix.

    Slow by design; this is the reference oracle analytic gradients are
    checked against.
    """
    if h <= 0:
        raise UsageError(f"finite-difference step must be positive, got {h}")
    at = np.asarray(at, dtype=np.float64)
    grad = np.empty_like(at)
    for i in range(at.shape[0]):
        for j in range(at.shape[1]):
            bumped = at.copy()
            bumped[i, j] = at[i, j] + h
            up = float(loss_fn(bumped))
            bumped[i, j] = at[i, j] - h
            down = float(loss_fn(bumped))
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"loss is non-finite when perturbing entry ({i}, {j})")
            grad[i, j] = (up - down) / (2.0 * h)
    return grad
