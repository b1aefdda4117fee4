"""
Tests for descriptor-space correspondence search.
"""
import os
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from models.correspondence import Correspondence, CorrespondenceSet
from models.errors import NoModelError
from services.matching import (cross_check, match_nn, nearest_two, putative_correspondences,
                               ratio_test)


def brute_force_nn(desc_a, desc_b):
    dist = np.linalg.norm(desc_a[:, None, :] - desc_b[None, :, :], axis=2)
    nearest = np.argmin(dist, axis=1)
    return nearest, dist[np.arange(len(desc_a)), nearest], dist


class TestNearestNeighbors:
    """Exact nearest neighbors through both search paths."""

    @pytest.mark.parametrize("dim", [3, 8, 33])
    def test_matches_brute_force(self, rng, dim):
        desc_a = rng.normal(size=(150, dim))
        desc_b = rng.normal(size=(120, dim))
        nearest, d1, _ = brute_force_nn(desc_a, desc_b)
        matches = match_nn(desc_a, desc_b)
        assert matches.index_a.tolist() == list(range(150))
        assert matches.index_b.tolist() == nearest.tolist()
        assert np.allclose(matches.feature_distance, d1, atol=1e-12)

    @pytest.mark.parametrize("dim", [4, 33])
    def test_second_nearest_distance(self, rng, dim):
        desc_a = rng.normal(size=(60, dim))
        desc_b = rng.normal(size=(40, dim))
        _, _, dist = brute_force_nn(desc_a, desc_b)
        expected = np.sort(dist, axis=1)[:, 1]
        _, _, d2 = nearest_two(desc_a, desc_b)
        assert np.allclose(d2, expected, atol=1e-12)

    @pytest.mark.parametrize("dim", [5, 33])
    def test_ties_go_to_lowest_index(self, rng, dim):
        base = rng.normal(size=(10, dim))
        desc_b = np.concatenate([base, base])
        matches = match_nn(base + 1e-3, desc_b)
        assert np.all(matches.index_b < 10)
        _, _, d2 = nearest_two(base, desc_b)
        assert np.allclose(d2, 0.0)

    @pytest.mark.parametrize("dim", [3, 16])
    def test_many_scattered_ties_go_to_lowest_index(self, dim):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            desc_b = rng.normal(size=(2000, dim))
            tied = np.sort(rng.choice(2000, size=12, replace=False))
            target = rng.normal(size=dim)
            desc_b[tied] = target
            matches = match_nn((target + 1e-9)[None, :], desc_b)
            assert matches.index_b.tolist() == [tied[0]]
            _, d1, d2 = nearest_two((target + 1e-9)[None, :], desc_b)
            assert d1[0] == d2[0]

    def test_nearest_is_invariant_under_target_permutation(self, rng):
        desc_a = rng.normal(size=(80, 6))
        desc_b = rng.normal(size=(60, 6))
        order = rng.permutation(60)
        plain = match_nn(desc_a, desc_b)
        permuted = match_nn(desc_a, desc_b[order])
        assert order[permuted.index_b].tolist() == plain.index_b.tolist()
        assert np.allclose(permuted.feature_distance, plain.feature_distance, atol=1e-12)

    def test_single_target_has_infinite_second_distance(self):
        _, _, d2 = nearest_two(np.zeros((3, 4)), np.ones((1, 4)))
        assert np.all(np.isinf(d2))

    def test_exclusions(self, rng):
        desc_a = rng.normal(size=(20, 6))
        desc_b = rng.normal(size=(30, 6))
        exclude_a = np.zeros(20, dtype=bool)
        exclude_a[::2] = True
        exclude_b = np.zeros(30, dtype=bool)
        exclude_b[:15] = True
        matches = match_nn(desc_a, desc_b, exclude_a, exclude_b)
        assert matches.index_a.tolist() == list(range(1, 20, 2))
        assert np.all(matches.index_b >= 15)
        nearest, _, _ = brute_force_nn(desc_a[1::2], desc_b[15:])
        assert matches.index_b.tolist() == (nearest + 15).tolist()

    def test_everything_excluded_gives_empty_set(self, rng):
        desc = rng.normal(size=(5, 3))
        assert len(match_nn(desc, desc, exclude_b=np.ones(5, dtype=bool))) == 0

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            match_nn(np.zeros((3, 4)), np.zeros((3, 5)))

    def test_rejects_empty_input(self):
        with pytest.raises(ValueError):
            match_nn(np.zeros((0, 4)), np.zeros((3, 4)))


class TestCrossCheck:
    """Mutual nearest-neighbor filtering."""

    def test_hand_built_example(self):
        forward = CorrespondenceSet.from_list([Correspondence(0, 1, 0.1), Correspondence(1, 1, 0.2),
                                               Correspondence(2, 0, 0.3)])
        backward = CorrespondenceSet.from_list([Correspondence(0, 2, 0.3), Correspondence(1, 0, 0.1)])
        assert cross_check(forward, backward).pairs() == {(0, 1), (2, 0)}

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000), n_a=st.integers(2, 40), n_b=st.integers(2, 40))
    def test_mutual_pairs_match_brute_force(self, seed, n_a, n_b):
        rng = np.random.default_rng(seed)
        desc_a = rng.normal(size=(n_a, 5))
        desc_b = rng.normal(size=(n_b, 5))
        ab, _, _ = brute_force_nn(desc_a, desc_b)
        ba, _, _ = brute_force_nn(desc_b, desc_a)
        expected = {(k, int(ab[k])) for k in range(n_a) if ba[ab[k]] == k}
        assert putative_correspondences(desc_a, desc_b, mutual=True).pairs() == expected

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        desc_a = rng.normal(size=(30, 4))
        desc_b = rng.normal(size=(25, 4))
        backward = match_nn(desc_b, desc_a)
        once = cross_check(match_nn(desc_a, desc_b), backward)
        assert cross_check(once, backward).pairs() == once.pairs()

    def test_empty_sides(self):
        assert len(cross_check(CorrespondenceSet.empty(), CorrespondenceSet.from_list(
            [Correspondence(0, 0, 0.0)]))) == 0


class TestRatioTest:
    """Nearest/second-nearest distance ratio filtering."""

    def test_matches_brute_force(self, rng):
        desc_a = rng.normal(size=(100, 8))
        desc_b = rng.normal(size=(80, 8))
        nearest, d1, dist = brute_force_nn(desc_a, desc_b)
        second = np.sort(dist, axis=1)[:, 1]
        keep = d1 / second < 0.8
        result = ratio_test(desc_a, desc_b, 0.8)
        assert result.index_a.tolist() == np.flatnonzero(keep).tolist()
        assert result.index_b.tolist() == nearest[keep].tolist()

    def test_duplicate_targets_never_pass(self, rng):
        base = rng.normal(size=(6, 4))
        result = ratio_test(base, np.concatenate([base, base]), 0.9)
        assert len(result) == 0

    def test_smaller_zeta_keeps_a_subset(self, rng):
        desc_a = rng.normal(size=(80, 6))
        desc_b = rng.normal(size=(70, 6))
        loose = ratio_test(desc_a, desc_b, 0.95).pairs()
        strict = ratio_test(desc_a, desc_b, 0.7).pairs()
        assert strict <= loose

    @pytest.mark.parametrize("zeta", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_zeta_outside_open_interval(self, zeta):
        with pytest.raises(ValueError, match="Ratio"):
            ratio_test(np.zeros((2, 3)), np.ones((3, 3)), zeta)

    def test_needs_two_targets(self):
        with pytest.raises(NoModelError, match="at least 2"):
            ratio_test(np.zeros((2, 3)), np.ones((1, 3)), 0.8)


def test_identical_descriptor_sets_match_themselves(rng):
    desc = rng.normal(size=(50, 33))
    result = putative_correspondences(desc, desc, mutual=True)
    assert result.pairs() == {(k, k) for k in range(50)}
    assert np.allclose(result.feature_distance, 0.0)
