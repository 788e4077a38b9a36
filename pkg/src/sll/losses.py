"""Prediction loss, Bhattacharyya alignment loss and reference divergences.

All logarithms are natural.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError, ShapeError
from .numerics import DTYPE, log_softmax, log_sum_exp, softmax


@dataclass
class LocalLossReport:
    pred_loss: float
    bc_loss: float
    head_accuracy: float

    @property
    def total(self) -> float:
        return self.pred_loss + self.bc_loss


def _check_labels(labels, batch: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidInputError("labels must be integer class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidInputError(f"labels must lie in [0, {num_classes})")
    return labels


def cross_entropy_with_grad(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=DTYPE)
    if z.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got {z.shape}")
    B, K = z.shape
    labels = _check_labels(labels, B, K)
    logp = log_softmax(z, axis=1)
    rows = np.arange(B)
    loss = -float(np.mean(logp[rows, labels]))
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= B
    return loss, grad


def bhattacharyya_coefficient(u, v) -> float:
    u = np.asarray(u, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if u.shape != v.shape:
        raise ShapeError(f"BC needs equal-length vectors, got {u.shape} and {v.shape}")
    return float(min(1.0, np.sum(np.sqrt(u * v))))


def _clamp_normalize(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    c = np.maximum(x, eps)
    s = np.sum(c, axis=-1, keepdims=True)
    return c / s, s


def bc_surrogate(q, p, eps: float = 1e-12, detach_p: bool = True,
                 reduction: str = "mean", return_grad: bool = False):
    """Per-sample Bhattacharyya loss ``-log BC(q_b, p_b)``, reduced over rows.

    Rows are clamped to ``eps`` and renormalised before taking logs; the
    coefficient is evaluated in log space as ``logsumexp(0.5 * (log q + log p))``.

    With ``return_grad`` the gradient with respect to the logits that produced
    ``q`` (``q = softmax(z)``) is returned as well. The ``p`` side is always
    treated as a constant there, so ``detach_p=False`` is rejected in that mode.
    """
    q = np.asarray(q, dtype=DTYPE)
    p = np.asarray(p, dtype=DTYPE)
    if q.shape != p.shape or q.ndim != 2:
        raise ShapeError(f"bc_surrogate needs matching B x K inputs, got {q.shape} and {p.shape}")
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    if reduction not in ("mean", "sum", "none"):
        raise InvalidInputError(f"unknown reduction {reduction!r}")
    if return_grad and not detach_p:
        raise InvalidInputError("gradients are only defined with the prior side detached")

    qn, qs = _clamp_normalize(q, eps)
    pn, _ = _clamp_normalize(p, eps)
    half = 0.5 * (np.log(qn) + np.log(pn))
    log_bc = log_sum_exp(half, axis=1)
    log_bc = np.atleast_1d(log_bc)
    per = -log_bc

    if reduction == "mean":
        loss = float(np.mean(per))
        w = 1.0 / q.shape[0]
    elif reduction == "sum":
        loss = float(np.sum(per))
        w = 1.0
    else:
        loss = per
        w = 1.0

    if not return_grad:
        return loss

    # d(-log BC)/dq_k for unclamped entries is -(0.5 * a_k / q_k - 0.5 / S) with
    # a = softmax of the half-log terms; multiplying by q_k folds in the softmax
    # Jacobian without dividing by tiny probabilities.
    a = np.exp(half - log_bc[:, None])
    active = q > eps
    t = np.where(active, 0.5 * a - 0.5 * q / qs, 0.0)
    grad = -(t - q * np.sum(t, axis=1, keepdims=True))
    if reduction == "mean":
        grad *= w
    return loss, grad


def bc_surrogate_from_logits(z, p, eps: float = 1e-12, reduction: str = "mean"):
    """Convenience wrapper: loss and gradient w.r.t. ``z`` for ``q = softmax(z)``."""
    return bc_surrogate(softmax(z, axis=1), p, eps=eps, reduction=reduction, return_grad=True)


def kl_divergence(q, p, eps: float = 1e-300) -> float:
    """``sum_k q_k log(q_k / p_k)`` with ``0 log 0 = 0``; ``p`` is floored at ``eps``."""
    q = np.asarray(q, dtype=DTYPE)
    p = np.asarray(p, dtype=DTYPE)
    if q.shape != p.shape:
        raise ShapeError(f"KL needs equal shapes, got {q.shape} and {p.shape}")
    nz = q > 0
    return float(np.sum(q[nz] * (np.log(q[nz]) - np.log(np.maximum(p[nz], eps)))))


def hellinger_sq(u, v) -> float:
    """Squared Hellinger distance ``1 - BC``, computed without cancellation."""
    u = np.asarray(u, dtype=DTYPE)
    v = np.asarray(v, dtype=DTYPE)
    if u.shape != v.shape:
        raise ShapeError(f"Hellinger needs equal shapes, got {u.shape} and {v.shape}")
    return float(0.5 * np.sum((np.sqrt(u) - np.sqrt(v)) ** 2))


@dataclass(frozen=True)
class ChainReport:
    kl: float
    neg2logbc: float
    two_one_minus_bc: float
    holds: bool


def inequality_chain(q, p, tol: float = 1e-12) -> ChainReport:
    """Evaluate ``KL(q||p) >= -2 log BC(q,p) >= 2 (1 - BC(q,p))``."""
    q = np.asarray(q, dtype=DTYPE)
    p = np.asarray(p, dtype=DTYPE)
    if q.shape != p.shape:
        raise ShapeError(f"inequality_chain needs equal shapes, got {q.shape} and {p.shape}")
    q = q / q.sum()
    p = p / p.sum()
    kl = kl_divergence(q, p)
    h2 = hellinger_sq(q, p)
    neg2logbc = -2.0 * np.log1p(-h2) if h2 < 1.0 else np.inf
    two = 2.0 * h2
    holds = bool(kl >= neg2logbc - tol and neg2logbc >= two - tol)
    return ChainReport(kl, float(neg2logbc), two, holds)
