"""Logical-byte memory accounting and metrics CSV output.

The ledger counts tensor bytes as ``elements * 8``; it does not look at the
allocator. Tags used by the trainers:

``activation``  layer outputs and forward caches (the depth-dependent part)
``cache``       transient loss-side buffers: codes, probabilities, gradients
``parameter``   weights and biases
``optimizer``   optimizer moment slots
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .exceptions import AccountingError

METRICS_COLUMNS = ("run_id", "epoch", "layer", "pred_loss", "bc_loss", "total_loss",
                   "head_acc", "test_acc", "peak_bytes", "wall_ms")


@dataclass
class MemoryLedger:
    live_bytes: int = 0
    peak_bytes: int = 0
    per_tag: dict = field(default_factory=lambda: defaultdict(int))
    peak_per_tag: dict = field(default_factory=lambda: defaultdict(int))
    trace: list | None = None

    def record_alloc(self, tag: str, nbytes: int) -> None:
        if nbytes < 0:
            raise AccountingError(f"negative allocation of {nbytes} bytes")
        self.per_tag[tag] += nbytes
        self.live_bytes += nbytes
        self.peak_bytes = max(self.peak_bytes, self.live_bytes)
        self.peak_per_tag[tag] = max(self.peak_per_tag[tag], self.per_tag[tag])
        if self.trace is not None:
            self.trace.append((tag, self.per_tag[tag]))

    def record_free(self, tag: str, nbytes: int) -> None:
        if nbytes > self.per_tag[tag]:
            raise AccountingError(f"freeing {nbytes} bytes of {tag!r} but only "
                                  f"{self.per_tag[tag]} are live")
        self.per_tag[tag] -= nbytes
        self.live_bytes -= nbytes
        if self.trace is not None:
            self.trace.append((tag, self.per_tag[tag]))

    def alloc_array(self, tag: str, arr) -> None:
        if arr is not None:
            self.record_alloc(tag, arr.size * 8)

    def free_array(self, tag: str, arr) -> None:
        if arr is not None:
            self.record_free(tag, arr.size * 8)

    def live(self, tag: str) -> int:
        return self.per_tag[tag]

    def peak(self, tag: str) -> int:
        return self.peak_per_tag[tag]

    def reset_peaks(self) -> None:
        self.peak_bytes = self.live_bytes
        for tag in list(self.peak_per_tag):
            self.peak_per_tag[tag] = self.per_tag[tag]


class NullLedger(MemoryLedger):
    """Accepts every call and records nothing."""

    def record_alloc(self, tag, nbytes):
        pass

    def record_free(self, tag, nbytes):
        pass


def write_metrics_csv(path, rows, append: bool = False) -> None:
    mode = "a" if append and os.path.exists(path) else "w"
    try:
        with open(path, mode, newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
            if mode == "w":
                w.writeheader()
            for row in rows:
                w.writerow({k: row.get(k, "") for k in METRICS_COLUMNS})
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass(frozen=True)
class AffineFit:
    slope: float
    intercept: float
    r2: float


def fit_affine(xs, ys) -> AffineFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return AffineFit(float(slope), float(intercept), float(r2))


def depth_sweep(width: int, depths, mode: str, batch_size: int = 128,
                num_classes: int = 10, in_dim: int | None = None, seed: int = 0) -> dict[int, int]:
    """Peak ``activation`` bytes of one training step per network depth.

    ``depth`` counts trainable layers: ``depth - 1`` hidden layers of ``width``
    units followed by a linear classifier. Every depth sees the same batch.
    SGD is used so optimizer state plays no part.
    """
    from .network import build_mlp
    from .numerics import make_rng
    from .trainers import SLLConfig, bp_train_step, sll_train_step

    if mode not in ("sll", "bp"):
        raise ValueError(f"mode must be 'sll' or 'bp', got {mode!r}")
    in_dim = width if in_dim is None else in_dim
    rng = make_rng(seed, 1)
    x = rng.standard_normal((batch_size, in_dim))
    y = rng.integers(0, num_classes, size=batch_size)
    cfg = SLLConfig(lr=1e-3, optimizer="sgd", batch_size=batch_size, seed=seed)
    out = {}
    for depth in depths:
        net = build_mlp(in_dim, [width] * (depth - 1), num_classes, seed=seed)
        ledger = MemoryLedger()
        step = sll_train_step if mode == "sll" else bp_train_step
        step(net, x, y, cfg, ledger=ledger)
        out[int(depth)] = ledger.peak("activation")
    return out
