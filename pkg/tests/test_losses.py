import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_error
from sll.exceptions import InvalidInputError, ShapeError
from sll.losses import (LocalLossReport, bc_surrogate, bc_surrogate_from_logits,
                        bhattacharyya_coefficient, cross_entropy_with_grad, hellinger_sq,
                        inequality_chain, kl_divergence)
from sll.numerics import make_rng, softmax


def test_bc_hand_value():
    # sqrt(0.45) + sqrt(0.05)
    assert bhattacharyya_coefficient([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.894427, abs=1e-6)


def test_kl_hand_value():
    # 0.6 ln 1.2 + 0.4 ln 0.8
    assert kl_divergence([0.6, 0.4], [0.5, 0.5]) == pytest.approx(0.020136, abs=1e-6)


def test_chain_hand_values():
    r = inequality_chain([0.6, 0.4], [0.5, 0.5])
    assert r.holds
    np.testing.assert_allclose([r.kl, r.neg2logbc, r.two_one_minus_bc],
                               [0.020136, 0.010154, 0.010127], atol=1e-6)


def test_chain_identical_is_zero():
    r = inequality_chain([0.2, 0.3, 0.5], [0.2, 0.3, 0.5])
    assert r.holds
    np.testing.assert_allclose([r.kl, r.neg2logbc, r.two_one_minus_bc], 0.0, atol=1e-15)


def test_bc_surrogate_point_mass_against_uniform():
    # -log sqrt(0.5), shifted by the eps clamp well below the tolerance
    loss = bc_surrogate(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))
    assert loss == pytest.approx(0.346574, abs=1e-5)


def test_bc_surrogate_identical_rows_zero():
    q = softmax(make_rng(0).standard_normal((4, 6)), axis=1)
    assert bc_surrogate(q, q) == pytest.approx(0.0, abs=1e-12)


def test_bc_surrogate_reductions():
    rng = make_rng(1)
    q = softmax(rng.standard_normal((5, 3)), axis=1)
    p = softmax(rng.standard_normal((5, 3)), axis=1)
    per = bc_surrogate(q, p, reduction="none")
    assert per.shape == (5,) and np.all(per >= 0)
    assert bc_surrogate(q, p, reduction="sum") == pytest.approx(per.sum())
    assert bc_surrogate(q, p) == pytest.approx(per.mean())


def test_bc_surrogate_rejects_grad_through_prior():
    q = np.full((1, 2), 0.5)
    with pytest.raises(InvalidInputError):
        bc_surrogate(q, q, detach_p=False, return_grad=True)
    assert bc_surrogate(q, q, detach_p=False) == pytest.approx(0.0, abs=1e-12)


def test_detach_p_gradient_has_no_prior_component():
    rng = make_rng(2)
    z = rng.standard_normal((3, 4))
    p1 = softmax(rng.standard_normal((3, 4)), axis=1)
    p2 = softmax(rng.standard_normal((3, 4)), axis=1)
    out1 = bc_surrogate_from_logits(z, p1)
    out2 = bc_surrogate_from_logits(z, p2)
    # a (loss, grad_q_logits) pair only; the grad is shaped like z
    assert len(out1) == 2 and out1[1].shape == z.shape
    assert out1[0] != out2[0]


@pytest.mark.parametrize("seed", range(50))
def test_bc_surrogate_grad_fd(seed):
    rng = make_rng(seed, 41)
    B, K = int(rng.integers(1, 5)), int(rng.integers(2, 8))
    z = rng.standard_normal((B, K)) * 2
    p = softmax(rng.standard_normal((B, K)), axis=1)
    _, g = bc_surrogate_from_logits(z, p)
    err = fd_error(lambda: bc_surrogate(softmax(z, axis=1), p), [z], [g])
    assert err <= 1e-5


@pytest.mark.parametrize("seed", range(50))
def test_cross_entropy_grad_fd(seed):
    rng = make_rng(seed, 43)
    B, K = int(rng.integers(1, 6)), int(rng.integers(2, 8))
    z = rng.standard_normal((B, K)) * 3
    y = rng.integers(0, K, size=B)
    _, g = cross_entropy_with_grad(z, y)
    assert fd_error(lambda: cross_entropy_with_grad(z, y)[0], [z], [g]) <= 1e-5


def test_cross_entropy_label_validation():
    with pytest.raises(InvalidInputError):
        cross_entropy_with_grad(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ShapeError):
        cross_entropy_with_grad(np.zeros((2, 3)), np.array([0]))


def test_cross_entropy_uniform_logits():
    loss, _ = cross_entropy_with_grad(np.zeros((4, 10)), np.arange(4))
    assert loss == pytest.approx(np.log(10))


def test_local_loss_report_total():
    r = LocalLossReport(1.5, 0.25, 0.5)
    assert r.total == 1.75


simplex = st.integers(2, 12).flatmap(
    lambda k: st.tuples(st.integers(0, 2**32 - 1), st.just(k)))


@settings(max_examples=200, deadline=None)
@given(simplex)
def test_bc_symmetry_and_hellinger(args):
    seed, k = args
    rng = make_rng(seed)
    u, v = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    assert abs(bhattacharyya_coefficient(u, v) - bhattacharyya_coefficient(v, u)) <= 1e-12
    assert hellinger_sq(u, v) == pytest.approx(1 - bhattacharyya_coefficient(u, v), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(simplex)
def test_chain_property(args):
    seed, k = args
    rng = make_rng(seed)
    assert inequality_chain(rng.dirichlet(np.ones(k) * 0.5), rng.dirichlet(np.ones(k))).holds


def test_second_order_ratio():
    rng = make_rng(7)
    for k in (2, 10, 100):
        p = rng.dirichlet(np.ones(k) * 5)
        g = rng.standard_normal(k)
        d = p * (g - np.dot(p, g))  # zero-sum, scaled to stay inside the simplex
        t = 1e-3 / np.max(np.abs(d / p))
        q = p + t * d
        ratio = kl_divergence(q, p) / hellinger_sq(q, p)
        assert abs(ratio - 4) / 4 <= 0.05
