"""Minimal dense tensor arithmetic with deterministic float32 semantics.

Tensors are plain C-contiguous float32 numpy arrays (rank >= 1).  All
reductions accumulate in float64 and round back to float32, so results are
reproducible bit-for-bit on one platform regardless of how callers batch or
thread their work.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericDomainError

__all__ = ["as_tensor", "matmul", "softmax", "softmax64", "rms_norm"]


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce ``values`` to a validated float32 tensor.

    Enforces rank >= 1, all extents >= 1, and C-contiguous layout.  ``shape``
    optionally reshapes flat input.
    """
    arr = np.asarray(values, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d < 1 for d in arr.shape):
        raise DimensionError(f"tensor extents must all be >= 1, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation, rounded to float32.

    Raises :class:`DimensionError` naming both shapes when the inner
    dimensions disagree.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = np.matmul(a.astype(np.float64), b.astype(np.float64))
    return out.astype(np.float32)


def softmax64(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable softmax in float64 (max-subtracted); used wherever weights are derived."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise NumericDomainError("softmax of an empty vector is undefined")
    if not np.all(np.isfinite(x)):
        raise NumericDomainError("softmax input contains NaN or Inf")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax(x) -> np.ndarray:
    """Softmax of a score vector, returned as a float32 probability vector.

    Shift-invariant by construction (the maximum is subtracted before
    exponentiation), so argmax is preserved exactly.
    """
    arr = as_tensor(x)
    if arr.ndim != 1:
        raise DimensionError(f"softmax expects a vector, got shape {arr.shape}")
    return softmax64(arr).astype(np.float32)


def rms_norm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Root-mean-square normalization over the last axis: v / sqrt(mean(v^2)+eps) * gain."""
    if gain.ndim != 1:
        raise DimensionError(f"rms_norm gain must be a vector, got shape {gain.shape}")
    if x.shape[-1] != gain.shape[0]:
        raise DimensionError(
            f"rms_norm last dimension {x.shape[-1]} does not match gain length {gain.shape[0]}"
        )
    x64 = x.astype(np.float64)
    ms = np.mean(x64 * x64, axis=-1, keepdims=True)
    out = x64 / np.sqrt(ms + eps) * gain.astype(np.float64)
    return out.astype(np.float32)
