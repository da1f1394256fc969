"""Dense float64 numerics shared by every other module.

Everything here is a pure function over numpy arrays: no hidden state,
deterministic output for identical input. All math is done in 64-bit
precision; gradient checks at 1e-4 relative tolerance do not survive
float32.
"""

from __future__ import annotations

import numpy as np

# Guard used whenever a vector is divided by its own norm.
L2_EPS = 1e-8


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a @ b with explicit dimension validation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})")
    return a @ b


def l2_normalize(h: np.ndarray, eps: float = L2_EPS) -> np.ndarray:
    """Scale rows to unit Euclidean norm: h / max(||h||, eps).

    Works on a single vector or row-wise on a batch. The eps guard maps
    the zero vector to itself instead of dividing by zero. Rows whose norm
    is already 1 up to accumulated rounding are returned unchanged, which
    makes normalization exactly idempotent.
    """
    h = np.asarray(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=-1, keepdims=True)
    snap = 4.0 * (h.shape[-1] + 4) * np.finfo(np.float64).eps
    norms = np.where(np.abs(norms - 1.0) <= snap, 1.0, norms)
    return h / np.maximum(norms, eps)


def central_moment(h: np.ndarray, p: int) -> float:
    """p-th central moment (1/d) * sum((h_i - mean)^p)."""
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.size == 0:
        raise ValueError("central_moment of an empty vector")
    if p < 1:
        raise ValueError(f"moment order must be >= 1, got {p}")
    return float(np.mean((h - h.mean()) ** p))


def double_factorial(n: int) -> int:
    """n!! with the conventions (-1)!! = 0!! = 1."""
    if n < -1:
        raise ValueError(f"double factorial undefined for n={n}")
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def softplus_stable(x):
    """log(1 + e^x) computed as max(x, 0) + log1p(e^-|x|); never overflows."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    """Logistic function, stable on both tails."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))  # always <= 1, never overflows
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def int_power(base: np.ndarray, p: int) -> np.ndarray:
    """base**p for integer p >= 1 by repeated squaring; much faster than
    libm pow on large arrays and exact for the small orders used here."""
    if p < 1:
        raise ValueError(f"int_power needs p >= 1, got {p}")
    result = None
    square = base
    n = p
    while n:
        if n & 1:
            result = square if result is None else result * square
        n >>= 1
        if n:
            square = square * square
    return result


def top_k_indices(h: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties broken toward the lowest index.

    Returns the indices sorted ascending (a canonical set representation).
    """
    h = np.asarray(h, dtype=np.float64).ravel()
    d = h.size
    if not 1 <= k <= d:
        raise ValueError(f"k={k} out of range for a vector of length {d}")
    # Stable sort on -h keeps original order among equal values.
    order = np.argsort(-h, kind="stable")
    return np.sort(order[:k])


def finite_difference_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one probe per coordinate.

    Used as the independent oracle against every analytic gradient in the
    package; it only ever calls f, never the analytic path.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for j in range(xf.size):
        orig = xf[j]
        xf[j] = orig + step
        fp = f(x)
        xf[j] = orig - step
        fm = f(x)
        xf[j] = orig
        flat[j] = (fp - fm) / (2.0 * step)
    return grad


def finite_difference_jvp(f, x: np.ndarray, v: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference directional derivative (J_f(x) @ v) for vector-valued f."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return (f(x + step * v) - f(x - step * v)) / (2.0 * step)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a-b| / max(|a|, |b|, floor); the gradient-check metric."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
