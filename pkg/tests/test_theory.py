import numpy as np
import pytest

from sll.exceptions import InvalidInputError
from sll.numerics import make_rng
from sll.theory import (DiscreteHierarchy, adversarial_hierarchy, check_assumptions, global_elbo,
                        layer_terms, random_hierarchy, sharpening_hierarchy, verify_layerwise_bound)


def test_q_equals_p_equal_readouts_zero_slack():
    p = [[[0.3, 0.7]], [[0.5, 0.5], [0.2, 0.8]]]
    lik = [[[0.6, 0.4], [0.6, 0.4]]] * 2
    r = verify_layerwise_bound(DiscreteHierarchy(p, p, lik))
    assert r.slack == pytest.approx(0.0, abs=1e-15)
    assert r.lhs == pytest.approx(r.rhs) and r.holds and r.asserted


def test_single_layer_identity():
    h = random_hierarchy(make_rng(0), L=1)
    r = verify_layerwise_bound(h)
    assert r.lhs == pytest.approx(r.rhs, abs=1e-12)


def test_enumeration_matches_hand_computation():
    p = [[[0.5, 0.5]]]
    q = [[[0.8, 0.2]]]
    lik = [[[0.9, 0.1], [0.3, 0.7]]]
    h = DiscreteHierarchy(p, q, lik, x=0, y=0)
    kl = 0.8 * np.log(0.8 / 0.5) + 0.2 * np.log(0.2 / 0.5)
    expected = 0.8 * np.log(0.9) + 0.2 * np.log(0.3) - kl
    assert global_elbo(h) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("seed", range(100))
def test_identity_and_signs(seed):
    h = random_hierarchy(make_rng(seed, 61))
    t = layer_terms(h)
    r = verify_layerwise_bound(h)
    assert r.identity_residual <= 1e-9
    assert np.all(t.K >= -1e-15)
    assert r.rhs <= 0


def test_sharpening_models_satisfy_assumptions():
    rng = make_rng(3)
    for _ in range(50):
        h = sharpening_hierarchy(rng, L=int(rng.integers(2, 5)))
        a = check_assumptions(h)
        r = verify_layerwise_bound(h)
        assert a.monotone_gain and a.kl_budget and r.asserted and r.holds


def test_adversarial_not_asserted():
    r = verify_layerwise_bound(adversarial_hierarchy())
    assert not r.asserted
    assert not check_assumptions(adversarial_hierarchy()).kl_budget


def test_validation():
    with pytest.raises(InvalidInputError):
        DiscreteHierarchy([[[0.5, 0.6]]], [[[0.5, 0.5]]], [[[1.0], [1.0]]])
    with pytest.raises(InvalidInputError):
        DiscreteHierarchy([[[1.0]]] * 5, [[[1.0]]] * 5, [[[1.0]]] * 5)
    big = np.full((1, 7), 1 / 7)
    with pytest.raises(InvalidInputError):
        DiscreteHierarchy([big], [big], [np.ones((7, 1))])
