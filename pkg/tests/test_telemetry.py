import numpy as np
import pytest

from sll.exceptions import AccountingError
from sll.network import build_mlp
from sll.numerics import make_rng
from sll.telemetry import (METRICS_COLUMNS, MemoryLedger, depth_sweep, fit_affine,
                           read_metrics_csv, write_metrics_csv)
from sll.trainers import SLLConfig, bp_train_step, sll_train_step


def test_scripted_trace():
    led = MemoryLedger()
    led.record_alloc("activation", 100)
    led.record_alloc("cache", 50)
    led.record_free("activation", 100)
    led.record_alloc("activation", 30)
    assert led.live_bytes == 80
    assert led.peak_bytes == 150
    assert led.peak("activation") == 100
    assert led.live("cache") == 50


def test_free_more_than_live_raises():
    led = MemoryLedger()
    led.record_alloc("activation", 8)
    with pytest.raises(AccountingError):
        led.record_free("activation", 16)


def test_metrics_schema_roundtrip(tmp_path):
    assert len(METRICS_COLUMNS) == 10
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [])
    assert path.read_text().strip() == ",".join(METRICS_COLUMNS)
    rows = [{"run_id": "a", "epoch": 1, "layer": 2, "pred_loss": 0.5, "bc_loss": 0.1,
             "total_loss": 0.6, "head_acc": 0.9, "test_acc": 0.8, "peak_bytes": 64,
             "wall_ms": 1.5}]
    write_metrics_csv(path, rows)
    write_metrics_csv(path, rows, append=True)
    back = read_metrics_csv(path)
    assert len(back) == 2
    assert back[0] == {k: str(v) for k, v in rows[0].items()}


def test_fit_affine_exact_line():
    fit = fit_affine([1, 2, 3, 4], [3, 5, 7, 9])
    assert fit.slope == pytest.approx(2) and fit.intercept == pytest.approx(1)
    assert fit.r2 == pytest.approx(1.0)


def _traced_step(step_fn, depth=5, width=16):
    net = build_mlp(12, [width] * (depth - 1), 4, seed=0)
    rng = make_rng(0)
    x, y = rng.standard_normal((8, 12)), rng.integers(0, 4, 8)
    led = MemoryLedger(trace=[])
    step_fn(net, x, y, SLLConfig(optimizer="sgd"), ledger=led)
    return [b for tag, b in led.trace if tag == "activation"], led


def test_sll_sawtooth_profile():
    acts, led = _traced_step(sll_train_step)
    assert led.live("activation") == 0 and led.live("cache") == 0
    layer_buf = 8 * 16 * 8
    # snapshot, pre-activation and output of one layer at most
    assert max(acts) <= 3 * layer_buf
    # after each hidden layer's update only its output is live
    assert acts.count(layer_buf) >= 4


def test_bp_profile_rises_then_falls():
    acts, led = _traced_step(bp_train_step)
    k = int(np.argmax(acts))
    assert all(a <= b for a, b in zip(acts[:k], acts[1:k + 1]))
    assert all(a >= b for a, b in zip(acts[k:], acts[k + 1:]))
    assert led.live("activation") == 0


def test_depth_sweep_shapes():
    sll = depth_sweep(32, [2, 4, 8], "sll", batch_size=16)
    bp = depth_sweep(32, [2, 4, 8], "bp", batch_size=16)
    assert sll[8] == sll[4]
    assert bp[2] < bp[4] < bp[8]
    with pytest.raises(ValueError):
        depth_sweep(8, [2], "xx")
