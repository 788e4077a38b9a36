"""Numeric primitives shared by the rest of the package.

Matrices are plain float64 numpy arrays (batch-major). Random streams come from
a counter-based Philox generator so a seed reproduces the same bits everywhere.
"""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError, ShapeError

DTYPE = np.float64


def make_rng(*keys: int) -> np.random.Generator:
    """Seeded Philox generator. Several integer keys may be given to derive
    independent sub-streams, e.g. ``make_rng(seed, step, layer)``."""
    if not keys:
        raise InvalidInputError("make_rng needs at least one seed key")
    for k in keys:
        if int(k) < 0:
            raise InvalidInputError(f"seed keys must be non-negative, got {k}")
    ss = np.random.SeedSequence([int(k) for k in keys])
    return np.random.Generator(np.random.Philox(ss))


def as_matrix(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    return x


def check_finite(x: np.ndarray, name: str = "input") -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite values")


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0:
        raise InvalidInputError("softmax of an empty vector")
    check_finite(z, "logits")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    check_finite(z, "logits")
    return z - log_sum_exp(z, axis=axis, keepdims=True)


def log_sum_exp(values, axis=None, keepdims: bool = False):
    v = np.asarray(values, dtype=DTYPE)
    if v.size == 0:
        raise InvalidInputError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    # all -inf rows: keep the shift finite so the result is -inf, not nan
    m_safe = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True)) + m_safe
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    if np.ndim(out) == 0:
        return float(out)
    return out


def gaussian_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise InvalidInputError(f"gaussian_matrix needs positive dims, got {rows}x{cols}")
    return rng.standard_normal((rows, cols), dtype=DTYPE)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=DTYPE).T)


def _same_shape(a, b, op: str):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "add")
    return a + b


def mul(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "mul")
    return a * b


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_derivative(x) -> np.ndarray:
    # derivative at exactly 0 is taken as 0
    return (np.asarray(x) > 0).astype(DTYPE)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes), dtype=DTYPE)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def max_relative_error(analytic, numeric) -> float:
    """Largest absolute discrepancy, scaled by the larger of the two tensors'
    max-norms."""
    a = np.asarray(analytic, dtype=DTYPE)
    n = np.asarray(numeric, dtype=DTYPE)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def central_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``.

    The step is scaled by ``max(1, |x_i|)`` per coordinate. ``x`` is perturbed
    in place and restored.
    """
    grad = np.zeros_like(x, dtype=DTYPE)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        h = eps * max(1.0, abs(orig))
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad
