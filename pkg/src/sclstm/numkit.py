"""Dense numeric helpers shared by the network, trainer and decoder.

Everything is float64 numpy. The wrappers exist mostly to pin down the
numerical conventions (stable softmax, tanh-based sigmoid, validated
categorical sampling) in one place.
"""
from __future__ import annotations

import numpy as np

Rng = np.random.Generator


class DimensionError(ValueError):
    pass


def make_rng(seed: int) -> Rng:
    """PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def as_vec(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"expected a non-empty vector, got shape {v.shape}")
    return v


def as_mat(values) -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {m.shape}")
    return m


def matvec(m, v) -> np.ndarray:
    m = as_mat(m)
    v = as_vec(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape} matrix by length-{v.shape[0]} vector")
    return m @ v


def _floats(x) -> np.ndarray:
    # keeps extended precision when given; everything else becomes float64
    x = np.asarray(x)
    return x if x.dtype.kind == "f" else x.astype(np.float64)


def sigmoid(x):
    # tanh form never overflows and keeps sigmoid(x) + sigmoid(-x) == 1 to rounding
    return 0.5 * (1.0 + np.tanh(0.5 * _floats(x)))


def tanh_vec(x):
    return np.tanh(_floats(x))


def softmax(x, axis: int = -1):
    x = _floats(x)
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def log_softmax(x, axis: int = -1):
    x = _floats(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def sample_categorical(p, rng: Rng) -> int:
    """Draw an index with probability ``p[i]``.

    Indices with zero probability are never returned, even when the
    uniform draw lands on the rounding slack of the cumulative sum.
    """
    p = as_vec(p)
    total = float(np.sum(p))
    if abs(total - 1.0) > 1e-6 or np.any(p < 0):
        raise ValueError(f"not a probability vector (sum={total!r})")
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= p.size:
        idx = int(np.flatnonzero(p > 0)[-1])
    return idx
