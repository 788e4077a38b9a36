"""Layer stack plus its frozen projection heads, and the checkpoint format.

Head ``0`` projects the raw input and supplies the prior side for layer 1;
head ``l`` (1 <= l < L) projects the output of hidden layer ``l``. The last
layer is the classifier and has no head.

Checkpoint layout (all integers little-endian)::

    magic   8 bytes   b"SLLCKPT\\0"
    version u32
    hlen    u32       length of the JSON header
    header  hlen bytes, UTF-8 JSON (architecture, seeds, block table)
    payload raw float64 '<f8' parameter blocks, offsets given in the header
    crc32   u32       over header + payload

Projection matrices are not stored; they are regenerated from their seeds.
"""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FormatError, InvalidInputError
from .layers import (BatchNorm1d, ConvLayerState, LayerState, adaptive_pool_matrix,
                     init_conv, init_dense)
from .numerics import DTYPE, make_rng, one_hot
from .projection import DropoutMask, effective_weights, make_head

MAGIC = b"SLLCKPT\0"
VERSION = 1

# sub-stream tags for make_rng
LAYER_INIT = 3
HEAD_INIT = 7


@dataclass(eq=False)
class Network:
    layers: list
    heads: list
    num_classes: int
    in_shape: tuple
    seed: int = 0
    keep_prob: float = 0.9
    label_concat: bool = False
    head_pool: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.heads) != len(self.layers):
            raise InvalidInputError(f"expected {len(self.layers)} heads (input head + one per "
                                    f"hidden layer), got {len(self.heads)}")
        if not self.head_pool:
            self.head_pool = [None] * len(self.heads)
        self._pool_mats = {}

    @property
    def depth(self) -> int:
        return len(self.layers)

    def _pool(self, idx: int, n_in: int):
        d = self.head_pool[idx]
        if d is None or d >= n_in:
            return None
        key = (idx, n_in)
        if key not in self._pool_mats:
            self._pool_mats[key] = adaptive_pool_matrix(n_in, d)
        return self._pool_mats[key]

    def code(self, idx: int, h, mask: DropoutMask | None = None, y=None):
        """Project ``h`` through head ``idx``. Returns ``(v, ctx)`` where ``ctx``
        is what :meth:`code_backward` needs."""
        head = self.heads[idx]
        flat = np.asarray(h, dtype=DTYPE).reshape(h.shape[0], -1)
        P = self._pool(idx, flat.shape[1])
        feat = flat @ P if P is not None else flat
        if head.label_concat:
            lab = one_hot(y, self.num_classes) if y is not None else \
                np.zeros((flat.shape[0], self.num_classes))
            feat = np.concatenate([feat, lab], axis=1)
        Weff = effective_weights(head, mask)
        v = feat @ Weff.T
        return v, (Weff, P, h.shape, head.label_concat)

    def code_backward(self, grad_v, ctx):
        Weff, P, h_shape, concat = ctx
        g = grad_v @ Weff
        if concat:
            g = g[:, :-self.num_classes]
        if P is not None:
            g = g @ P.T
        return g.reshape(h_shape)

    def forward(self, x):
        """Evaluation-mode pass; returns the list of layer outputs."""
        outs = []
        h = np.asarray(x, dtype=DTYPE)
        for layer in self.layers:
            h, cache = layer.forward(h, training=False)
            cache.release()
            outs.append(h)
        return outs

    def logits(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=DTYPE)
        for layer in self.layers:
            h, cache = layer.forward(h, training=False)
            cache.release()
        return h


def _head_dim(n_features: int, pool: int | None) -> int:
    return n_features if pool is None or pool >= n_features else pool


def _make_heads(seed, feature_dims, num_classes, keep_prob, label_concat, head_pool):
    heads = []
    for idx, n in enumerate(feature_dims):
        d = _head_dim(n, head_pool[idx])
        if label_concat:
            d += num_classes
        heads.append(make_head(d, num_classes, keep_prob, seed=(seed, HEAD_INIT, idx),
                               label_concat=label_concat))
    return heads


def build_mlp(in_dim: int, hidden: list[int], num_classes: int, seed: int = 0,
              keep_prob: float = 0.9, dropout: float = 0.0, batchnorm: bool = False,
              label_concat: bool = False, head_dim: int | None = None) -> Network:
    """``len(hidden)`` relu layers followed by a linear classifier."""
    dims = [in_dim] + list(hidden)
    layers = []
    for l in range(len(hidden)):
        layers.append(init_dense(dims[l], dims[l + 1], "relu", make_rng(seed, LAYER_INIT, l + 1),
                                 dropout=dropout, batchnorm=batchnorm))
    layers.append(init_dense(dims[-1], num_classes, "identity",
                             make_rng(seed, LAYER_INIT, len(hidden) + 1)))
    head_pool = [None] + [head_dim] * len(hidden)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        heads = _make_heads(seed, dims, num_classes, keep_prob, label_concat, head_pool)
    return Network(layers, heads, num_classes, (in_dim,), seed, keep_prob, label_concat,
                   head_pool)


def build_cnn(in_shape: tuple[int, int, int], channels: list[int], num_classes: int,
              seed: int = 0, keep_prob: float = 0.9, kernel: int = 3, pool: int = 2,
              head_dim: int | None = 1024, hidden: list[int] = (),
              dropout: float = 0.0, label_concat: bool = False) -> Network:
    """Conv(k3, pad 1)-relu-maxpool blocks, optional dense layers, then a
    linear classifier. Conv heads see activations average-pooled to
    ``head_dim`` features."""
    layers, feats = [], []
    shape = tuple(in_shape)
    idx = 1
    for c in channels:
        layer = init_conv(shape[0], c, kernel, make_rng(seed, LAYER_INIT, idx), pool=pool)
        layers.append(layer)
        shape = layer.output_shape(shape)
        feats.append(int(np.prod(shape)))
        idx += 1
    n = int(np.prod(shape))
    for w in hidden:
        layers.append(init_dense(n, w, "relu", make_rng(seed, LAYER_INIT, idx), dropout=dropout))
        n = w
        feats.append(w)
        idx += 1
    layers.append(init_dense(n, num_classes, "identity", make_rng(seed, LAYER_INIT, idx)))
    dims = [int(np.prod(in_shape))] + feats
    head_pool = [head_dim] + [head_dim] * len(channels) + [None] * len(hidden)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        heads = _make_heads(seed, dims, num_classes, keep_prob, label_concat, head_pool)
    return Network(layers, heads, num_classes, tuple(in_shape), seed, keep_prob,
                   label_concat, head_pool)


# --------------------------------------------------------------- checkpoint

def _layer_desc(layer) -> dict:
    if isinstance(layer, LayerState):
        return {"kind": "dense", "in": layer.in_dim, "out": layer.out_dim,
                "activation": layer.activation, "dropout": layer.dropout,
                "batchnorm": layer.bn is not None}
    return {"kind": "conv", "shape": list(layer.kernels.shape), "stride": layer.stride,
            "padding": layer.padding, "pool": layer.pool}


def save_checkpoint(path, net: Network) -> None:
    blocks, chunks, offset = [], [], 0
    for i, layer in enumerate(net.layers):
        arrays = dict(layer.params())
        arrays.update(layer.buffers())
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            blocks.append({"layer": i, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(data)
            offset += len(data)
    header = {
        "version": VERSION,
        "num_classes": net.num_classes,
        "in_shape": list(net.in_shape),
        "seed": net.seed,
        "keep_prob": net.keep_prob,
        "label_concat": net.label_concat,
        "head_pool": net.head_pool,
        "head_seeds": [list(h.seed) if h.seed is not None else None for h in net.heads],
        "head_dims": [[h.out_dim, h.in_dim] for h in net.heads],
        "layers": [_layer_desc(l) for l in net.layers],
        "blocks": blocks,
        "meta": net.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)
    crc = zlib.crc32(hbytes + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> Network:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", 0)
    version, hlen = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    start = 16
    if len(raw) < start + hlen + 4:
        raise FormatError("truncated checkpoint", len(raw))
    hbytes = raw[start:start + hlen]
    payload = raw[start + hlen:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(hbytes + payload) & 0xFFFFFFFF != crc:
        raise FormatError("checksum mismatch", len(raw) - 4)
    try:
        header = json.loads(hbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", start) from exc

    layers = []
    for desc in header["layers"]:
        if desc["kind"] == "dense":
            W = np.zeros((desc["out"], desc["in"]))
            layer = LayerState(W, np.zeros(desc["out"]), desc["activation"],
                               dropout=desc["dropout"])
            if desc["batchnorm"]:
                layer.bn = BatchNorm1d(desc["out"])
        elif desc["kind"] == "conv":
            layer = ConvLayerState(np.zeros(desc["shape"]), np.zeros(desc["shape"][0]),
                                   desc["stride"], desc["padding"], desc["pool"])
        else:
            raise FormatError(f"unknown layer kind {desc['kind']!r}", start)
        layers.append(layer)

    for blk in header["blocks"]:
        layer = layers[blk["layer"]]
        n = int(np.prod(blk["shape"])) * 8
        lo = blk["offset"]
        if lo + n > len(payload):
            raise FormatError(f"block {blk['name']} of layer {blk['layer']} runs past payload",
                              start + hlen + lo)
        arr = np.frombuffer(payload[lo:lo + n], dtype="<f8").reshape(blk["shape"]).astype(DTYPE)
        name = blk["name"]
        if name in ("gamma", "beta", "running_mean", "running_var"):
            setattr(layer.bn, name, arr)
        else:
            setattr(layer, name, arr)

    heads = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for seed, (out_dim, in_dim) in zip(header["head_seeds"], header["head_dims"]):
            heads.append(make_head(in_dim, out_dim, header["keep_prob"], seed=tuple(seed),
                                   label_concat=header["label_concat"]))
    return Network(layers, heads, header["num_classes"], tuple(header["in_shape"]),
                   header["seed"], header["keep_prob"], header["label_concat"],
                   header["head_pool"], header.get("meta", {}))
