"""SGD, Adam and Adamax updates applied in place to a layer's parameter dict."""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError, ShapeError

OPTIMIZERS = ("sgd", "adam", "adamax")


def optimizer_update(kind: str, params: dict, grads: dict, state: dict, lr: float,
                     t: int, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """Update ``params`` in place.

    ``state`` holds per-parameter moment slots and is created lazily; ``t`` is
    the 1-based step count used for bias correction.
    """
    if kind not in OPTIMIZERS:
        raise InvalidInputError(f"unknown optimizer {kind!r}; choose from {OPTIMIZERS}")
    if t < 1:
        raise InvalidInputError(f"step count must be >= 1, got {t}")
    b1, b2 = betas
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if kind == "sgd":
            p -= lr * g
            continue
        m = state.setdefault(f"{name}.m", np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        if kind == "adam":
            v = state.setdefault(f"{name}.v", np.zeros_like(p))
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        else:
            u = state.setdefault(f"{name}.u", np.zeros_like(p))
            np.maximum(b2 * u, np.abs(g) + eps, out=u)
            p -= (lr / (1 - b1 ** t)) * m / u
