"""Fixed random-projection heads.

A head maps an activation batch ``h`` (B x d) to codes ``v`` (B x K) through a
frozen Gaussian matrix ``R`` scaled by ``1/sqrt(K)``. During training a fresh
Bernoulli mask may be applied to ``R`` (inverted dropout: kept weights are
divided by ``keep_prob`` so evaluation needs no rescaling).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError, ShapeError
from .numerics import DTYPE, gaussian_matrix


@dataclass(frozen=True)
class ProjectionHead:
    R: np.ndarray
    keep_prob: float = 0.9
    seed: tuple[int, ...] | None = None
    label_concat: bool = False
    scale: float = field(init=False)

    def __post_init__(self):
        R = np.array(self.R, dtype=DTYPE)
        if R.ndim != 2:
            raise ShapeError(f"projection matrix must be 2-D, got {R.shape}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise InvalidInputError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "scale", 1.0 / np.sqrt(R.shape[0]))

    @property
    def out_dim(self) -> int:
        return self.R.shape[0]

    @property
    def in_dim(self) -> int:
        return self.R.shape[1]


@dataclass(frozen=True)
class DropoutMask:
    mask: np.ndarray
    keep_prob: float


def make_head(in_dim: int, out_dim: int, keep_prob: float = 0.9,
              rng: np.random.Generator | None = None, *,
              seed: tuple[int, ...] | None = None,
              label_concat: bool = False) -> ProjectionHead:
    if out_dim < 1:
        raise InvalidInputError(f"out_dim must be >= 1, got {out_dim}")
    if in_dim < 1:
        raise InvalidInputError(f"in_dim must be >= 1, got {in_dim}")
    if not 0.0 < keep_prob <= 1.0:
        raise InvalidInputError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if not (in_dim >= out_dim >= 2):
        warnings.warn(f"projection head {out_dim}x{in_dim} is not a compression "
                      "to >= 2 codes", stacklevel=2)
    if rng is None:
        if seed is None:
            raise InvalidInputError("make_head needs either rng or seed")
        from .numerics import make_rng
        rng = make_rng(*seed)
    R = gaussian_matrix(out_dim, in_dim, rng)
    return ProjectionHead(R, keep_prob=keep_prob, seed=seed, label_concat=label_concat)


def sample_mask(head: ProjectionHead, rng: np.random.Generator) -> DropoutMask:
    if head.keep_prob == 1.0:
        m = np.ones_like(head.R)
    else:
        m = (rng.random(head.R.shape) < head.keep_prob).astype(DTYPE)
    return DropoutMask(m, head.keep_prob)


def effective_weights(head: ProjectionHead, mask: DropoutMask | None = None) -> np.ndarray:
    """``scale * (M * R) / keep_prob``, or ``scale * R`` without a mask."""
    if mask is None:
        return head.scale * head.R
    if mask.mask.shape != head.R.shape:
        raise ShapeError(f"mask shape {mask.mask.shape} does not match head {head.R.shape}")
    return (head.scale / mask.keep_prob) * (mask.mask * head.R)


def project(head: ProjectionHead, h, mask: DropoutMask | None = None) -> np.ndarray:
    h = np.asarray(h, dtype=DTYPE)
    if h.ndim != 2 or h.shape[1] != head.in_dim:
        raise ShapeError(f"cannot project activations of shape {h.shape} "
                         f"with a head expecting {head.in_dim} features")
    return h @ effective_weights(head, mask).T


@dataclass(frozen=True)
class DistortionReport:
    median_eps: float
    max_eps: float
    per_trial: np.ndarray


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared distances for every pair a < b, in ``np.triu_indices`` order."""
    x = np.asarray(x, dtype=DTYPE)
    i, j = np.triu_indices(x.shape[0], k=1)
    diff = x[i] - x[j]
    return np.einsum("ij,ij->i", diff, diff)


def jl_distortion_probe(points, out_dim: int, trials: int,
                        rng: np.random.Generator) -> DistortionReport:
    """Empirical worst-pair distortion of scaled Gaussian projections.

    Each trial draws ``R ~ N(0, 1)`` of shape ``out_dim x d`` and measures
    ``max_pairs | |v_a - v_b|^2 / |h_a - h_b|^2 - 1 |`` with ``v = R h / sqrt(out_dim)``.
    """
    pts = np.asarray(points, dtype=DTYPE)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise InvalidInputError("jl_distortion_probe needs at least two points")
    if out_dim < 1 or trials < 1:
        raise InvalidInputError("out_dim and trials must be positive")
    if pts.shape[1] < out_dim:
        raise InvalidInputError(f"out_dim {out_dim} exceeds point dimension {pts.shape[1]}")
    i, j = np.triu_indices(pts.shape[0], k=1)
    diff = pts[i] - pts[j]
    base = np.einsum("ij,ij->i", diff, diff)
    keep = base > 0
    if not np.any(keep):
        raise InvalidInputError("all points coincide; distortion is undefined")
    diff, base = diff[keep], base[keep]
    eps = np.empty(trials)
    for t in range(trials):
        R = gaussian_matrix(out_dim, pts.shape[1], rng) / np.sqrt(out_dim)
        pd = diff @ R.T
        ratio = np.einsum("ij,ij->i", pd, pd) / base
        eps[t] = np.max(np.abs(ratio - 1.0))
    return DistortionReport(float(np.median(eps)), float(np.max(eps)), eps)
