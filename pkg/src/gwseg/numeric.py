"""Small numeric helpers used across modules."""

from __future__ import annotations

import numpy as np

# Rows whose L2 norm is already this close to 1 are left untouched by
# l2_normalize_rows. This makes normalization bit-exactly idempotent and
# keeps save/load round trips of already-normalized data exact.
_UNIT_TOL = 1e-9


def l2_normalize_rows(x: np.ndarray, zero_mode: str = "basis") -> np.ndarray:
    """L2-normalize the rows of a 1D or 2D array.

    zero_mode controls what an all-zero row becomes:
      - "basis": the first unit basis direction (cosine is undefined at zero,
        so a fixed direction is substituted),
      - "zero": left as the zero vector (downstream cosine scores become 0).
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    norms = np.linalg.norm(arr, axis=1)
    out = arr.copy()
    needs = np.abs(norms - 1.0) > _UNIT_TOL
    safe = needs & (norms > 0.0)
    out[safe] = arr[safe] / norms[safe, None]
    zero = norms == 0.0
    if np.any(zero):
        if zero_mode == "basis":
            out[zero] = 0.0
            out[zero, 0] = 1.0
        elif zero_mode == "zero":
            out[zero] = 0.0
        else:
            raise ValueError(f"unknown zero_mode: {zero_mode!r}")
    return out[0] if single else out


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for numerical stability."""
    arr = np.asarray(scores, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    shifted = arr - arr.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if single else out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)
