"""Layer-local (SLL) and end-to-end (BP) training steps, evaluation and probing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergedError, InvalidInputError
from .losses import LocalLossReport, bc_surrogate, cross_entropy_with_grad
from .network import Network
from .numerics import DTYPE, make_rng, softmax
from .optim import OPTIMIZERS, optimizer_update
from .projection import sample_mask
from .telemetry import MemoryLedger, NullLedger

# sub-stream tags for make_rng
STEP_RNG = 11
INPUT_MASK = 0
SHUFFLE_RNG = 13
AUGMENT_RNG = 17


@dataclass
class SLLConfig:
    lr: float = 1e-3
    optimizer: str = "adamax"
    epochs: int = 100
    batch_size: int = 128
    bc_weight: float = 1.0
    final_align: bool = True
    bc_layers: tuple | None = None
    seed: int = 0
    augment: tuple = ()
    image_shape: tuple | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidInputError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if self.bc_weight < 0:
            raise InvalidInputError(f"bc_weight must be >= 0, got {self.bc_weight}")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")
        for a in self.augment:
            if a not in ("flip", "crop"):
                raise InvalidInputError(f"unknown augmentation {a!r}")
        if self.augment and self.image_shape is None:
            raise InvalidInputError("augmentation needs image_shape")

    def bc_on(self, layer: int) -> bool:
        return self.bc_weight > 0 and (self.bc_layers is None or layer in self.bc_layers)


@dataclass
class StepReport:
    layers: list
    wall_ms: float
    peak_bytes: int = 0


def _apply_update(layer, grads, cfg: SLLConfig) -> None:
    t = layer.opt_state.get("t", 0) + 1
    layer.opt_state["t"] = t
    slots = layer.opt_state.setdefault("slots", {})
    optimizer_update(cfg.optimizer, layer.params(), grads, slots, cfg.lr, t)


def _accuracy(scores: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(scores, axis=1) == y))


def _track_cache(ledger, cache, snapshot_copied: bool) -> None:
    if snapshot_copied:
        ledger.alloc_array("activation", cache.input_snapshot)
    ledger.alloc_array("activation", cache.pre_activation)
    ledger.alloc_array("activation", cache.extras.get("dropout"))


def _untrack_cache(ledger, cache, snapshot_copied: bool) -> None:
    if snapshot_copied:
        ledger.free_array("activation", cache.input_snapshot)
    ledger.free_array("activation", cache.pre_activation)
    ledger.free_array("activation", cache.extras.get("dropout"))


def sll_train_step(net: Network, x, y, cfg: SLLConfig, ledger: MemoryLedger | None = None,
                   step: int = 0) -> StepReport:
    """One layer-local update of every layer on the batch ``(x, y)``.

    Layer ``l`` sees a detached copy of the output of layer ``l - 1``, computes
    its own prediction and alignment losses through its frozen head, and
    updates its parameters from the within-layer gradient only. The prior side
    of the alignment term is the code layer ``l - 1`` produced (head 0 on the
    input for layer 1).
    """
    ledger = NullLedger() if ledger is None else ledger
    x = np.asarray(x, dtype=DTYPE)
    y = np.asarray(y)
    t0 = time.perf_counter()
    L = net.depth
    reports = []

    rng_in = make_rng(cfg.seed, STEP_RNG, step, INPUT_MASK)
    v_prev, _ = net.code(0, x, sample_mask(net.heads[0], rng_in), y)
    ledger.alloc_array("cache", v_prev)

    h_prev = x
    for l in range(1, L + 1):
        layer = net.layers[l - 1]
        rng = make_rng(cfg.seed, STEP_RNG, step, l)
        detach = l > 1
        h, cache = layer.forward(h_prev, detach_input=detach, training=True, rng=rng)
        if detach:
            # the snapshot replaces the upstream buffer before the layer computes
            ledger.alloc_array("activation", cache.input_snapshot)
            ledger.free_array("activation", h_prev)
        _track_cache(ledger, cache, False)
        ledger.alloc_array("activation", h)
        if not np.all(np.isfinite(h)):
            raise DivergedError(l, step, float("nan"))

        p = softmax(v_prev, axis=1)
        if l < L:
            mask = sample_mask(net.heads[l], rng)
            v, ctx = net.code(l, h, mask, y)
            ledger.alloc_array("cache", v)
            pred, g_v = cross_entropy_with_grad(v, y)
            bc = 0.0
            if cfg.bc_on(l):
                bc, g_bc = bc_surrogate(softmax(v, axis=1), p, return_grad=True)
                g_v += cfg.bc_weight * g_bc
                bc *= cfg.bc_weight
            grad_h = net.code_backward(g_v, ctx)
            acc = _accuracy(v, y)
        else:
            v = None
            logits = h.reshape(h.shape[0], -1)
            pred, grad_h = cross_entropy_with_grad(logits, y)
            bc = 0.0
            if cfg.final_align and cfg.bc_on(l):
                bc, g_bc = bc_surrogate(softmax(logits, axis=1), p, return_grad=True)
                grad_h += cfg.bc_weight * g_bc
                bc *= cfg.bc_weight
            grad_h = grad_h.reshape(h.shape)
            acc = _accuracy(logits, y)

        total = pred + bc
        if not np.isfinite(total):
            raise DivergedError(l, step, total)
        ledger.alloc_array("cache", grad_h)
        grads = layer.backward_local(cache, grad_h)
        _apply_update(layer, grads, cfg)
        ledger.free_array("cache", grad_h)
        _untrack_cache(ledger, cache, detach)
        cache.release()

        ledger.free_array("cache", v_prev)
        v_prev = v
        h_prev = h
        reports.append(LocalLossReport(pred, bc, acc))

    ledger.free_array("activation", h_prev)
    return StepReport(reports, (time.perf_counter() - t0) * 1e3, ledger.peak("activation"))


def bp_train_step(net: Network, x, y, cfg: SLLConfig, ledger: MemoryLedger | None = None,
                  step: int = 0) -> StepReport:
    """Standard end-to-end cross-entropy step; every cache lives until the
    backward sweep reaches its layer."""
    ledger = NullLedger() if ledger is None else ledger
    x = np.asarray(x, dtype=DTYPE)
    y = np.asarray(y)
    t0 = time.perf_counter()
    caches, outs = [], []
    h = x
    for l, layer in enumerate(net.layers, start=1):
        rng = make_rng(cfg.seed, STEP_RNG, step, l)
        h, cache = layer.forward(h, detach_input=False, training=True, rng=rng)
        _track_cache(ledger, cache, False)
        ledger.alloc_array("activation", h)
        if not np.all(np.isfinite(h)):
            raise DivergedError(l, step, float("nan"))
        caches.append(cache)
        outs.append(h)

    logits = h.reshape(h.shape[0], -1)
    loss, g = cross_entropy_with_grad(logits, y)
    if not np.isfinite(loss):
        raise DivergedError(net.depth, step, loss)
    acc = _accuracy(logits, y)
    g = g.reshape(h.shape)
    ledger.alloc_array("cache", g)
    for l in range(net.depth, 0, -1):
        layer, cache = net.layers[l - 1], caches[l - 1]
        grads, g_in = layer.backward_full(cache, g)
        _apply_update(layer, grads, cfg)
        ledger.free_array("cache", g)
        ledger.alloc_array("cache", g_in)
        _untrack_cache(ledger, cache, False)
        ledger.free_array("activation", outs[l - 1])
        cache.release()
        g = g_in
    ledger.free_array("cache", g)
    reports = [LocalLossReport(float("nan"), 0.0, float("nan"))] * (net.depth - 1)
    reports.append(LocalLossReport(loss, 0.0, acc))
    return StepReport(reports, (time.perf_counter() - t0) * 1e3, ledger.peak("activation"))


def _batches(n: int, batch_size: int):
    for lo in range(0, n, batch_size):
        yield slice(lo, min(lo + batch_size, n))


def evaluate(net: Network, X, y, batch_size: int = 1000) -> dict:
    X = np.asarray(X, dtype=DTYPE)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    correct, loss_sum = 0, 0.0
    for sl in _batches(X.shape[0], batch_size):
        logits = net.logits(X[sl]).reshape(sl.stop - sl.start, -1)
        loss, _ = cross_entropy_with_grad(logits, y[sl])
        loss_sum += loss * (sl.stop - sl.start)
        correct += int(np.sum(np.argmax(logits, axis=1) == y[sl]))
    n = X.shape[0]
    return {"accuracy": correct / n, "mean_loss": loss_sum / n}


def per_layer_probe(net: Network, X, y, batch_size: int = 1000) -> list[dict]:
    """Evaluation-mode local losses and head accuracy for every layer."""
    X = np.asarray(X, dtype=DTYPE)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise InvalidInputError("cannot probe on an empty dataset")
    L = net.depth
    sums = np.zeros((L, 3))
    for sl in _batches(X.shape[0], batch_size):
        xb, yb = X[sl], y[sl]
        nb = xb.shape[0]
        v_prev, _ = net.code(0, xb)
        h = xb
        for l in range(1, L + 1):
            h, cache = net.layers[l - 1].forward(h, training=False)
            cache.release()
            v = net.code(l, h)[0] if l < L else h.reshape(nb, -1)
            pred, _ = cross_entropy_with_grad(v, yb)
            bc = bc_surrogate(softmax(v, axis=1), softmax(v_prev, axis=1))
            sums[l - 1] += np.array([pred, bc, _accuracy(v, yb)]) * nb
            v_prev = v
    sums /= X.shape[0]
    return [{"layer": l + 1, "pred_loss": float(s[0]), "bc_loss": float(s[1]),
             "total_loss": float(s[0] + s[1]), "head_acc": float(s[2])}
            for l, s in enumerate(sums)]


@dataclass
class EpochSummary:
    epoch: int
    layers: list
    wall_ms: float
    peak_bytes: int
    test: dict | None = None
    rows: list = field(default_factory=list)


def train_epochs(net: Network, X, y, cfg: SLLConfig, method: str = "sll", X_test=None,
                 y_test=None, epochs: int | None = None, start_epoch: int = 0,
                 run_id: str = "run", callback=None, step_offset: int = 0) -> list[EpochSummary]:
    """Minibatch training for ``epochs`` epochs; returns one summary per epoch
    with metrics rows ready for :func:`sll.telemetry.write_metrics_csv`."""
    from .data import augment_batch

    if method not in ("sll", "bp"):
        raise InvalidInputError(f"method must be 'sll' or 'bp', got {method!r}")
    step_fn = sll_train_step if method == "sll" else bp_train_step
    X = np.asarray(X, dtype=DTYPE)
    y = np.asarray(y)
    n = X.shape[0]
    if n == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    epochs = cfg.epochs if epochs is None else epochs
    steps_per_epoch = -(-n // cfg.batch_size)
    summaries = []
    for e in range(start_epoch, start_epoch + epochs):
        t0 = time.perf_counter()
        ledger = MemoryLedger()
        order = make_rng(cfg.seed, SHUFFLE_RNG, e).permutation(n)
        sums = np.zeros((net.depth, 3))
        for b, sl in enumerate(_batches(n, cfg.batch_size)):
            idx = order[sl]
            xb, yb = X[idx], y[idx]
            if cfg.augment:
                xb = augment_batch(xb, cfg.image_shape, cfg.augment,
                                   make_rng(cfg.seed, AUGMENT_RNG, e, b))
            if net.in_shape and len(net.in_shape) == 3:
                xb = xb.reshape((xb.shape[0],) + tuple(net.in_shape))
            rep = step_fn(net, xb, yb, cfg, ledger=ledger,
                          step=step_offset + e * steps_per_epoch + b)
            for i, r in enumerate(rep.layers):
                sums[i] += np.array([r.pred_loss, r.bc_loss, r.head_accuracy]) * len(idx)
        sums /= n
        wall = (time.perf_counter() - t0) * 1e3
        test = None
        if X_test is not None:
            Xt = np.asarray(X_test, dtype=DTYPE)
            if len(net.in_shape) == 3:
                Xt = Xt.reshape((Xt.shape[0],) + tuple(net.in_shape))
            test = evaluate(net, Xt, y_test)
        layers = [LocalLossReport(*s) for s in sums]
        rows = [{"run_id": run_id, "epoch": e + 1, "layer": i + 1,
                 "pred_loss": r.pred_loss, "bc_loss": r.bc_loss, "total_loss": r.total,
                 "head_acc": r.head_accuracy,
                 "test_acc": "" if test is None else test["accuracy"],
                 "peak_bytes": ledger.peak("activation"), "wall_ms": round(wall, 3)}
                for i, r in enumerate(layers)]
        summary = EpochSummary(e + 1, layers, wall, ledger.peak("activation"), test, rows)
        summaries.append(summary)
        if callback is not None:
            callback(summary)
    return summaries
