import numpy as np
import pytest

from sll.exceptions import InvalidInputError
from sll.numerics import make_rng
from sll.projection import (effective_weights, jl_distortion_probe, make_head, project,
                            sample_mask)


def test_head_scale_and_shape():
    head = make_head(50, 10, seed=(1,))
    assert head.R.shape == (10, 50)
    assert head.scale == 1.0 / np.sqrt(10)


def test_head_is_read_only():
    head = make_head(20, 5, seed=(2,))
    with pytest.raises(ValueError):
        head.R[0, 0] = 1.0


def test_head_same_seed_same_matrix():
    assert make_head(20, 5, seed=(9, 7)).R.tobytes() == make_head(20, 5, seed=(9, 7)).R.tobytes()


def test_head_validation():
    with pytest.raises(InvalidInputError):
        make_head(10, 0, seed=(0,))
    with pytest.raises(InvalidInputError):
        make_head(10, 4, keep_prob=0.0, seed=(0,))
    with pytest.raises(InvalidInputError):
        make_head(10, 4, keep_prob=1.5, seed=(0,))


def test_mask_fraction():
    head = make_head(100, 100, keep_prob=0.8, seed=(3,))
    m = sample_mask(head, make_rng(5)).mask
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert abs(m.mean() - 0.8) <= 0.01


def test_keep_prob_one_mask_is_identity(rng):
    head = make_head(30, 10, keep_prob=1.0, seed=(4,))
    h = rng.standard_normal((4, 30))
    np.testing.assert_array_equal(project(head, h, sample_mask(head, rng)), project(head, h))


def test_project_matches_definition(rng):
    head = make_head(30, 10, seed=(4,))
    h = rng.standard_normal((4, 30))
    np.testing.assert_allclose(project(head, h), head.scale * h @ head.R.T, atol=1e-14)


def test_inverted_dropout_preserves_expectation(rng):
    head = make_head(40, 10, keep_prob=0.9, seed=(6,))
    h = rng.standard_normal((3, 40))
    ref = project(head, h)
    acc = np.zeros_like(ref)
    n = 10_000
    for _ in range(n):
        acc += h @ effective_weights(head, sample_mask(head, rng)).T
    mean = acc / n
    assert np.linalg.norm(mean - ref) / np.linalg.norm(ref) <= 0.02


def test_jl_all_duplicates_rejected():
    with pytest.raises(InvalidInputError):
        jl_distortion_probe(np.ones((2, 8)), 4, 3, make_rng(0))


def test_jl_skips_duplicate_pairs(rng):
    pts = rng.standard_normal((5, 64))
    pts[1] = pts[0]
    rep = jl_distortion_probe(pts, 32, 5, make_rng(1))
    assert np.isfinite(rep.median_eps)


def test_jl_full_dimension_small_distortion():
    # fixed seed; the median sits near 0.2 on average across seeds
    pts = make_rng(0, 29).standard_normal((32, 512))
    rep = jl_distortion_probe(pts, 512, 30, make_rng(0, 31))
    assert rep.median_eps <= 0.2


def test_jl_median_decreases_from_64_to_256():
    pts = make_rng(1).standard_normal((32, 256))
    m64 = jl_distortion_probe(pts, 64, 30, make_rng(2)).median_eps
    m256 = jl_distortion_probe(pts, 256, 30, make_rng(3)).median_eps
    assert m256 <= m64


def test_monotone_over_seeds_allows_rare_inversions():
    bad = 0
    seeds = 20
    for s in range(seeds):
        pts = make_rng(s, 29).standard_normal((32, 1024))
        med = [jl_distortion_probe(pts, k, 30, make_rng(s, 31, k)).median_eps
               for k in (16, 64, 256)]
        bad += int(not (med[0] >= med[1] >= med[2]))
    assert bad <= max(1, int(0.05 * seeds))
