import numpy as np
import pytest

from sll.exceptions import InvalidInputError, ShapeError
from sll.optim import optimizer_update


def _step(kind, grads_seq, lr=0.1):
    p = {"w": np.array([1.0, -1.0])}
    state = {}
    for t, g in enumerate(grads_seq, start=1):
        optimizer_update(kind, p, {"w": np.asarray(g, dtype=float)}, state, lr, t)
    return p["w"], state


def test_sgd():
    w, state = _step("sgd", [[2.0, -4.0]])
    np.testing.assert_allclose(w, [0.8, -0.6])
    assert state == {}


def test_adam_two_steps_scalar_oracle():
    g1, g2, lr, b1, b2, eps = 0.5, -1.5, 0.1, 0.9, 0.999, 1e-8
    m1, v1 = (1 - b1) * g1, (1 - b2) * g1 ** 2
    p = 1.0 - lr * (m1 / (1 - b1)) / (np.sqrt(v1 / (1 - b2)) + eps)
    m2, v2 = b1 * m1 + (1 - b1) * g2, b2 * v1 + (1 - b2) * g2 ** 2
    p -= lr * (m2 / (1 - b1 ** 2)) / (np.sqrt(v2 / (1 - b2 ** 2)) + eps)
    w, state = _step("adam", [[g1, 0.0], [g2, 0.0]])
    assert w[0] == pytest.approx(p, rel=1e-14)
    assert set(state) == {"w.m", "w.v"}


def test_adamax_two_steps_scalar_oracle():
    g1, g2, lr, b1, b2, eps = 0.5, -1.5, 0.1, 0.9, 0.999, 1e-8
    m1, u1 = (1 - b1) * g1, abs(g1) + eps
    p = 1.0 - lr / (1 - b1) * m1 / u1
    m2, u2 = b1 * m1 + (1 - b1) * g2, max(b2 * u1, abs(g2) + eps)
    p -= lr / (1 - b1 ** 2) * m2 / u2
    w, state = _step("adamax", [[g1, 0.0], [g2, 0.0]])
    assert w[0] == pytest.approx(p, rel=1e-14)
    assert state["w.u"].shape == (2,)


def test_errors():
    p = {"w": np.zeros(2)}
    with pytest.raises(InvalidInputError):
        optimizer_update("rmsprop", p, {"w": np.zeros(2)}, {}, 0.1, 1)
    with pytest.raises(InvalidInputError):
        optimizer_update("adam", p, {"w": np.zeros(2)}, {}, 0.1, 0)
    with pytest.raises(ShapeError):
        optimizer_update("sgd", p, {"w": np.zeros(3)}, {}, 0.1, 1)
