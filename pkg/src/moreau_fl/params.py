"""Flat parameter-vector arithmetic.

Parameter vectors are plain 1-D float64 numpy arrays; a model's layout is
identified by its length. Reductions go through :func:`math.fsum`, which is
correctly rounded and therefore independent of summation order and of any
BLAS threading.
"""
from __future__ import annotations

import math

import numpy as np


class LayoutError(ValueError):
    """Two parameter vectors do not share a layout."""


def as_params(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise LayoutError(f"parameter vectors are 1-D, got shape {arr.shape}")
    return arr


def check_layout(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise LayoutError(f"layout mismatch: {x.shape} vs {y.shape}")


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``y + a * x`` as a new vector."""
    x, y = as_params(x), as_params(y)
    check_layout(x, y)
    return y + a * x


def scale(a: float, x) -> np.ndarray:
    return a * as_params(x)


def sub(x, y) -> np.ndarray:
    x, y = as_params(x), as_params(y)
    check_layout(x, y)
    return x - y


def dot(x, y) -> float:
    x, y = as_params(x), as_params(y)
    check_layout(x, y)
    return math.fsum((x * y).tolist())


def norm2_sq(x) -> float:
    """Squared Euclidean norm."""
    return dot(x, x)


def mean_of(vectors) -> np.ndarray:
    """Average of equally shaped vectors, accumulated in the order given."""
    vectors = [as_params(v) for v in vectors]
    if not vectors:
        raise ValueError("cannot average an empty list")
    acc = np.zeros_like(vectors[0])
    for v in vectors:
        check_layout(acc, v)
        acc += v
    return acc / len(vectors)
