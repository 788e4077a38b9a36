"""Trainable layers with closed-form within-layer gradients.

Every layer exposes two backward flavours:

* ``backward_local`` returns parameter gradients only. It never produces a
  gradient for the layer input, so nothing can flow to upstream layers.
* ``backward_full`` additionally returns the input gradient and is used by the
  end-to-end backprop baseline.

Forward caches are single use: consuming one with ``release=True`` (the default
in the trainers) clears its buffers, and a released cache cannot be reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import CacheError, InvalidInputError, ShapeError
from .numerics import DTYPE, relu, relu_derivative

ACTIVATIONS = ("relu", "identity")


@dataclass(eq=False)
class ForwardCache:
    owner: object
    input_snapshot: np.ndarray | None
    pre_activation: np.ndarray | None
    output: np.ndarray | None
    input_shape: tuple = ()
    extras: dict = field(default_factory=dict)
    released: bool = False

    @property
    def nbytes(self) -> int:
        """Logical bytes held by the cache (elements x 8)."""
        n = 0
        for a in (self.input_snapshot, self.pre_activation):
            if a is not None:
                n += a.size * 8
        return n

    def release(self) -> None:
        self.input_snapshot = None
        self.pre_activation = None
        self.output = None
        self.extras.clear()
        self.released = True


def _check_cache(layer, cache: ForwardCache) -> None:
    if cache is None or cache.released:
        raise CacheError("forward cache is absent or was already released")
    if cache.owner is not layer:
        raise CacheError("forward cache was produced by a different layer")


# ---------------------------------------------------------------- batchnorm

@dataclass(eq=False)
class BatchNorm1d:
    num_features: int
    momentum: float = 0.1
    eps: float = 1e-5
    gamma: np.ndarray = None
    beta: np.ndarray = None
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    def __post_init__(self):
        n = self.num_features
        if self.gamma is None:
            self.gamma = np.ones(n)
        if self.beta is None:
            self.beta = np.zeros(n)
        if self.running_mean is None:
            self.running_mean = np.zeros(n)
        if self.running_var is None:
            self.running_var = np.ones(n)


def batchnorm1d_forward(bn: BatchNorm1d, x: np.ndarray, training: bool):
    if training:
        if x.shape[0] < 2:
            raise InvalidInputError("batch norm needs at least 2 samples in training mode")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        n = x.shape[0]
        bn.running_mean = (1 - bn.momentum) * bn.running_mean + bn.momentum * mu
        bn.running_var = (1 - bn.momentum) * bn.running_var + bn.momentum * var * n / (n - 1)
    else:
        mu, var = bn.running_mean, bn.running_var
    inv_std = 1.0 / np.sqrt(var + bn.eps)
    xhat = (x - mu) * inv_std
    y = bn.gamma * xhat + bn.beta
    return y, {"xhat": xhat, "inv_std": inv_std, "training": training}


def batchnorm1d_backward(bn: BatchNorm1d, cache: dict, dy: np.ndarray):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std = cache["xhat"], cache["inv_std"]
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * bn.gamma
    if not cache["training"]:
        return dxhat * inv_std, dgamma, dbeta
    n = dy.shape[0]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dx, dgamma, dbeta


# -------------------------------------------------------------------- dense

@dataclass(eq=False)
class LayerState:
    """Fully connected layer ``activation(x W^T + b)`` with optional batch norm
    on the pre-activation and inverted dropout on the output."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"
    dropout: float = 0.0
    bn: BatchNorm1d | None = None
    opt_state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidInputError(f"dropout rate must lie in [0, 1), got {self.dropout}")
        if self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"bias shape {self.b.shape} does not match W {self.W.shape}")

    kind = "dense"

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        p = {"W": self.W, "b": self.b}
        if self.bn is not None:
            p["gamma"] = self.bn.gamma
            p["beta"] = self.bn.beta
        return p

    def buffers(self) -> dict[str, np.ndarray]:
        if self.bn is None:
            return {}
        return {"running_mean": self.bn.running_mean, "running_var": self.bn.running_var}

    def forward(self, x, detach_input=False, training=False, rng=None):
        return dense_forward(self, x, detach_input, training=training, rng=rng)

    def backward_local(self, cache, grad_h):
        return dense_backward_local(self, cache, grad_h)

    def backward_full(self, cache, grad_h):
        return dense_backward_full(self, cache, grad_h)


def init_dense(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator,
               dropout: float = 0.0, batchnorm: bool = False) -> LayerState:
    # Kaiming-uniform for relu layers, 1/sqrt(fan_in) otherwise
    bound = np.sqrt(6.0 / in_dim) if activation == "relu" else 1.0 / np.sqrt(in_dim)
    W = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-1.0 / np.sqrt(in_dim), 1.0 / np.sqrt(in_dim), size=out_dim)
    bn = BatchNorm1d(out_dim) if batchnorm else None
    return LayerState(W, b, activation, dropout=dropout, bn=bn)


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    return relu(z) if kind == "relu" else z


def dense_forward(layer: LayerState, x, detach_input: bool = False, *,
                  training: bool = False, rng: np.random.Generator | None = None):
    x = np.asarray(x, dtype=DTYPE)
    input_shape = x.shape
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(f"dense layer expects (B, {layer.in_dim}) input, got {input_shape}")
    snap = x.copy() if detach_input else x
    pre = snap @ layer.W.T + layer.b
    extras = {}
    dropout_on = training and layer.dropout > 0.0
    if layer.bn is None and not dropout_on:
        # relu in place: the backward pass reads its mask from the output
        h = np.maximum(pre, 0.0, out=pre) if layer.activation == "relu" else pre
        return h, ForwardCache(layer, snap, None, h, input_shape, extras)
    z = pre
    if layer.bn is not None:
        z, extras["bn"] = batchnorm1d_forward(layer.bn, pre, training)
    h = _activate(layer.activation, z)
    if dropout_on:
        if rng is None:
            raise InvalidInputError("activation dropout needs an rng in training mode")
        keep = 1.0 - layer.dropout
        mask = (rng.random(h.shape) < keep) / keep
        extras["dropout"] = mask
        h = h * mask
    cache = ForwardCache(layer, snap, pre, h, input_shape, extras)
    return h, cache


def _dense_dpre(layer: LayerState, cache: ForwardCache, grad_h: np.ndarray):
    grad_h = np.asarray(grad_h, dtype=DTYPE)
    if grad_h.shape != cache.output.shape:
        raise ShapeError(f"grad_h shape {grad_h.shape} does not match layer output "
                         f"{cache.output.shape}")
    g = grad_h
    if "dropout" in cache.extras:
        g = g * cache.extras["dropout"]
    grads = {}
    if layer.bn is not None:
        bc = cache.extras["bn"]
        z = layer.bn.gamma * bc["xhat"] + layer.bn.beta
        g = g * relu_derivative(z) if layer.activation == "relu" else g
        g, grads["gamma"], grads["beta"] = batchnorm1d_backward(layer.bn, bc, g)
    elif layer.activation == "relu":
        src = cache.output if cache.pre_activation is None else cache.pre_activation
        g = g * relu_derivative(src)
    return g, grads


def dense_backward_local(layer: LayerState, cache: ForwardCache, grad_h) -> dict[str, np.ndarray]:
    _check_cache(layer, cache)
    dpre, grads = _dense_dpre(layer, cache, grad_h)
    grads["W"] = dpre.T @ cache.input_snapshot
    grads["b"] = dpre.sum(axis=0)
    return grads


def dense_backward_full(layer: LayerState, cache: ForwardCache, grad_h):
    _check_cache(layer, cache)
    dpre, grads = _dense_dpre(layer, cache, grad_h)
    grads["W"] = dpre.T @ cache.input_snapshot
    grads["b"] = dpre.sum(axis=0)
    grad_input = (dpre @ layer.W).reshape(cache.input_shape)
    return grads, grad_input


# --------------------------------------------------------------------- conv

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    N, C, OH, OW = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * OH * OW, C * kh * kw)
    return cols, (OH, OW)


def conv2d_forward(x, kernels, bias, stride: int = 1, padding: int = 0):
    """Cross-correlation with explicit im2col. Returns ``(out, cols)``."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise ShapeError(f"conv expects (N, {kernels.shape[1]}, H, W) input, got {x.shape}")
    O, C, kh, kw = kernels.shape
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {x.shape[2:]}")
    cols, (OH, OW) = _im2col(x, kh, kw, stride, padding)
    out = cols @ kernels.reshape(O, -1).T + bias
    out = out.reshape(x.shape[0], OH, OW, O).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def conv2d_backward(dout, cols, x_shape, kernels, stride: int = 1, padding: int = 0,
                    need_input: bool = False):
    """Returns ``(dkernels, dbias, dx or None)``."""
    O, C, kh, kw = kernels.shape
    N, _, OH, OW = dout.shape
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, O)
    dk = (d2.T @ cols).reshape(kernels.shape)
    db = d2.sum(axis=0)
    if not need_input:
        return dk, db, None
    dcols = (d2 @ kernels.reshape(O, -1)).reshape(N, OH, OW, C, kh, kw)
    H, W = x_shape[2] + 2 * padding, x_shape[3] + 2 * padding
    dxp = np.zeros((N, C, H, W))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * OH:stride, j:j + stride * OW:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dk, db, dxp


def maxpool2d_forward(x, size: int = 2):
    N, C, H, W = x.shape
    oh, ow = H // size, W // size
    if oh == 0 or ow == 0:
        raise ShapeError(f"pool size {size} larger than input {H}x{W}")
    xw = x[:, :, :oh * size, :ow * size].reshape(N, C, oh, size, ow, size)
    xw = xw.transpose(0, 1, 2, 4, 3, 5).reshape(N, C, oh, ow, size * size)
    idx = np.argmax(xw, axis=-1)
    out = np.take_along_axis(xw, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2d_backward(dout, cache, size: int = 2):
    idx, shape = cache
    N, C, H, W = shape
    oh, ow = dout.shape[2:]
    dw = np.zeros((N, C, oh, ow, size * size))
    np.put_along_axis(dw, idx[..., None], dout[..., None], axis=-1)
    dw = dw.reshape(N, C, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(shape)
    dx[:, :, :oh * size, :ow * size] = dw.reshape(N, C, oh * size, ow * size)
    return dx


def adaptive_pool_matrix(n_in: int, d: int) -> np.ndarray:
    """``n_in x d`` averaging operator; bin ``i`` covers
    ``[floor(i n / d), ceil((i + 1) n / d))``."""
    if d < 1 or d > n_in:
        raise InvalidInputError(f"cannot pool {n_in} features to {d}")
    P = np.zeros((n_in, d))
    for i in range(d):
        lo = (i * n_in) // d
        hi = -((-(i + 1) * n_in) // d)
        P[lo:hi, i] = 1.0 / (hi - lo)
    return P


def adaptive_avg_pool_to(h, d: int):
    """Flatten each sample channel-major and average-pool it to exactly ``d``
    features. Returns ``(pooled, P)``; the backward map is ``g @ P.T``."""
    h = np.asarray(h, dtype=DTYPE)
    flat = h.reshape(h.shape[0], -1)
    P = adaptive_pool_matrix(flat.shape[1], d)
    return flat @ P, P


@dataclass(eq=False)
class ConvLayerState:
    """``maxpool(relu(conv(x)))`` block; ``pool=0`` disables pooling."""

    kernels: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 1
    pool: int = 2
    opt_state: dict = field(default_factory=dict)

    kind = "conv"
    activation = "relu"

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError(f"kernels must be 4-D, got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError("bias length must equal output channels")

    def params(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        C, H, W = in_shape
        kh, kw = self.kernels.shape[2:]
        OH = (H + 2 * self.padding - kh) // self.stride + 1
        OW = (W + 2 * self.padding - kw) // self.stride + 1
        if self.pool:
            OH, OW = OH // self.pool, OW // self.pool
        return self.kernels.shape[0], OH, OW

    def forward(self, x, detach_input=False, training=False, rng=None):
        return conv_forward(self, x, detach_input)

    def backward_local(self, cache, grad_h):
        return conv_backward_local(self, cache, grad_h)

    def backward_full(self, cache, grad_h):
        return conv_backward_full(self, cache, grad_h)


def init_conv(in_ch: int, out_ch: int, k: int, rng: np.random.Generator,
              stride: int = 1, padding: int = 1, pool: int = 2) -> ConvLayerState:
    fan_in = in_ch * k * k
    bound = np.sqrt(6.0 / fan_in)
    kernels = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k))
    bias = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=out_ch)
    return ConvLayerState(kernels, bias, stride, padding, pool)


def conv_forward(layer: ConvLayerState, x, detach_input: bool = False):
    x = np.asarray(x, dtype=DTYPE)
    snap = x.copy() if detach_input else x
    pre, cols = conv2d_forward(snap, layer.kernels, layer.bias, layer.stride, layer.padding)
    a = relu(pre)
    extras = {"cols": cols}
    if layer.pool:
        h, extras["pool"] = maxpool2d_forward(a, layer.pool)
    else:
        h = a
    return h, ForwardCache(layer, snap, pre, h, x.shape, extras)


def _conv_dpre(layer, cache, grad_h):
    g = np.asarray(grad_h, dtype=DTYPE)
    if layer.pool:
        g = maxpool2d_backward(g, cache.extras["pool"], layer.pool)
    return g * relu_derivative(cache.pre_activation)


def conv_backward_local(layer: ConvLayerState, cache: ForwardCache, grad_h):
    _check_cache(layer, cache)
    dpre = _conv_dpre(layer, cache, grad_h)
    dk, db, _ = conv2d_backward(dpre, cache.extras["cols"], cache.input_shape,
                                layer.kernels, layer.stride, layer.padding)
    return {"kernels": dk, "bias": db}


def conv_backward_full(layer: ConvLayerState, cache: ForwardCache, grad_h):
    _check_cache(layer, cache)
    dpre = _conv_dpre(layer, cache, grad_h)
    dk, db, dx = conv2d_backward(dpre, cache.extras["cols"], cache.input_shape,
                                 layer.kernels, layer.stride, layer.padding, need_input=True)
    return {"kernels": dk, "bias": db}, dx
