import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from flairhi.volume import DomainError
from flairhi.wmmask import (WmEstimationConfig, estimate_wm, initial_segmentation, kmeans,
                            merge_wm_ground_truth, pure_cluster, select_cluster_by_atlas)

from oracles import cube_mean


def threshold_scan(wm0, hi, atlas, brain, k):
    """Per-voxel evaluation of the expansion rule with thresholds from wm0."""
    h = hi[wm0]
    mu = sum(h) / len(h)
    sd = math.sqrt(sum((v - mu) ** 2 for v in h) / len(h))
    t_hi = mu + k * sd
    t_prob = sum(atlas[wm0]) / wm0.sum()
    out = wm0.copy()
    for v in map(tuple, np.argwhere(brain & ~wm0)):
        if cube_mean(hi, brain, v, 1) > t_hi and cube_mean(atlas, brain, v, 1) > t_prob:
            out[v] = True
    return out


def two_regions():
    a = np.zeros((6, 6, 6))
    a[3:] = 10.0
    a += np.linspace(0, 0.1, a.size).reshape(a.shape)
    return a


class TestKmeans:
    def test_separable_partition(self):
        a = two_regions()
        labels = initial_segmentation([a], np.ones(a.shape, bool), k=2, seed=3)
        assert (labels[:3] == 1).all() and (labels[3:] == 2).all()

    def test_deterministic(self, rng):
        x = rng.normal(size=(500, 2))
        r1, r2 = kmeans(x, 4, seed=9), kmeans(x, 4, seed=9)
        assert_array_equal(r1[0], r2[0])
        assert_array_equal(r1[1], r2[1])
        assert r1[2] <= 100

    def test_assignments_are_nearest_centres(self, rng):
        x = rng.normal(size=(300, 3))
        assign, centers, _ = kmeans(x, 3, seed=1)
        d = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assert_array_equal(assign, np.argmin(d, axis=1))

    def test_tie_goes_to_lowest_index(self):
        x = np.array([[0.0], [0.0], [0.0], [1.0]])
        assign, centers, _ = kmeans(x, 2, seed=0, n_init=1)
        assert len(set(assign[:3])) == 1

    def test_too_few_samples(self):
        m = np.zeros((3, 3, 3), bool)
        m[0, 0, 0] = m[1, 1, 1] = True
        with pytest.raises(DomainError):
            initial_segmentation([np.ones((3, 3, 3))], m, k=3)

    def test_phantom_tiers_get_distinct_labels(self, phantom, chain):
        labels = chain["labels"]
        majority = []
        for truth in (phantom.csf_truth, phantom.gm_truth, phantom.wm_truth):
            majority.append(np.bincount(labels[truth], minlength=4).argmax())
        assert len(set(majority)) == 3
        assert (labels[~phantom.brain_mask] == 0).all()
        assert set(np.unique(labels[phantom.brain_mask])) == {1, 2, 3}

    def test_labels_ordered_by_first_channel(self, chain, phantom):
        norm = chain["norm"]
        means = [norm[chain["labels"] == k].mean() for k in (1, 2, 3)]
        assert means == sorted(means)


class TestAtlasSelection:
    def test_separable(self):
        labels = np.ones((4, 4, 4), np.uint8)
        labels[2:] = 2
        atlas = np.zeros(labels.shape)
        atlas[2:] = 1.0
        assert_array_equal(select_cluster_by_atlas(labels, atlas), labels == 2)

    def test_uniform_atlas_picks_lowest_label(self):
        labels = np.zeros((4, 4, 4), np.uint8)
        labels[1] = 3
        labels[2] = 2
        assert_array_equal(select_cluster_by_atlas(labels, np.full(labels.shape, 0.4)),
                           labels == 2)

    def test_positive_affine_invariance(self, rng):
        labels = rng.integers(0, 4, (6, 6, 6)).astype(np.uint8)
        atlas = rng.random(labels.shape)
        base = select_cluster_by_atlas(labels, atlas)
        assert_array_equal(select_cluster_by_atlas(labels, 0.3 * atlas + 0.2), base)

    def test_phantom_wm_cluster(self, phantom, chain):
        wm0 = chain["wm0"]
        wm_label = np.bincount(chain["labels"][phantom.wm_truth]).argmax()
        assert_array_equal(wm0, chain["labels"] == wm_label)

    def test_no_labels(self):
        with pytest.raises(DomainError):
            select_cluster_by_atlas(np.zeros((2, 2, 2), np.uint8), np.ones((2, 2, 2)))


class TestEstimateWm:
    def test_zero_map_outside_initial(self, rng):
        wm0 = np.zeros((8, 8, 8), bool)
        wm0[2:6, 2:6, 2:6] = True
        hi = np.where(wm0, rng.random(wm0.shape), 0.0)
        atlas = np.where(wm0, 0.9, 0.1)
        assert_array_equal(estimate_wm(wm0, hi, atlas), wm0)

    def test_planted_blob_matches_scan(self, rng):
        shape = (16, 16, 12)
        brain = np.ones(shape, bool)
        wm0 = np.zeros(shape, bool)
        wm0[3:13, 3:13, 2:10] = True
        blob = np.zeros(shape, bool)
        blob[7:10, 7:10, 5:8] = True
        wm0 &= ~blob
        hi = rng.random(shape) * 0.2
        hi[blob] = 0.95
        atlas = np.where(wm0, 0.9, 0.2) + rng.random(shape) * 0.01
        atlas[6:11, 6:11, 4:9] = 0.98
        est = estimate_wm(wm0, hi, atlas, WmEstimationConfig(k_sigma=1.0), brain)
        assert_array_equal(est, threshold_scan(wm0, hi, atlas, brain, 1.0))
        assert est[8, 8, 6]

    def test_scan_oracle_on_phantom(self, phantom, chain):
        b = phantom.brain_mask
        for k in (3.0, 1.0):
            est = estimate_wm(chain["wm0"], chain["hi"], phantom.wm_atlas,
                              WmEstimationConfig(k_sigma=k), b)
            sub = (slice(None), slice(None), slice(20, 24))
            ref = threshold_scan(chain["wm0"], chain["hi"], phantom.wm_atlas, b, k)
            assert_array_equal(est[sub], ref[sub])

    def test_infinite_k(self, phantom, chain):
        est = estimate_wm(chain["wm0"], chain["hi"], phantom.wm_atlas,
                          WmEstimationConfig(k_sigma=math.inf), phantom.brain_mask)
        assert_array_equal(est, chain["wm0"])

    def test_superset_and_anti_monotone(self, phantom, chain):
        prev = None
        for k in (0.0, 0.5, 1.0, 2.0, 3.0, 5.0):
            est = estimate_wm(chain["wm0"], chain["hi"], phantom.wm_atlas,
                              WmEstimationConfig(k_sigma=k), phantom.brain_mask)
            assert (est >= chain["wm0"]).all()
            if prev is not None:
                assert (est <= prev).all()
            prev = est

    def test_fixpoint_equals_single_pass(self, phantom, chain):
        args = (chain["wm0"], chain["hi"], phantom.wm_atlas)
        one = estimate_wm(*args, WmEstimationConfig(k_sigma=1.0), phantom.brain_mask)
        fix = estimate_wm(*args, WmEstimationConfig(k_sigma=1.0, iterate_to_fixpoint=True),
                          phantom.brain_mask)
        assert_array_equal(one, fix)

    def test_empty_initial(self):
        with pytest.raises(DomainError):
            estimate_wm(np.zeros((3, 3, 3), bool), np.ones((3, 3, 3)), np.ones((3, 3, 3)))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            WmEstimationConfig(k_sigma=-1)
        assert WmEstimationConfig().k_sigma == 3.0


class TestSetOps:
    def test_disjoint_union(self):
        a = np.zeros(30, bool)
        b = np.zeros(30, bool)
        a[:10], b[20:25] = True, True
        assert merge_wm_ground_truth(a.reshape(2, 3, 5), b.reshape(2, 3, 5)).sum() == 15

    def test_absorbing_union(self, rng):
        c = rng.random((4, 4, 4)) < 0.6
        gt = c & (rng.random(c.shape) < 0.3)
        assert_array_equal(merge_wm_ground_truth(c, gt), c)

    def test_pure_cluster_cases(self, rng):
        c = rng.random((4, 4, 4)) < 0.5
        assert_array_equal(pure_cluster(c, np.zeros_like(c)), c)
        assert not pure_cluster(c, np.ones_like(c)).any()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_bitwise_oracles_and_identities(self, seed):
        r = np.random.default_rng(seed)
        c = r.random((5, 4, 3)) < 0.5
        gt = r.random(c.shape) < 0.3
        merged = merge_wm_ground_truth(c, gt)
        pure = pure_cluster(c, gt)
        for idx in np.ndindex(c.shape):
            assert merged[idx] == (c[idx] or gt[idx])
            assert pure[idx] == (c[idx] and not gt[idx])
        assert (merge_wm_ground_truth(pure, gt) >= (c & (c | gt))).all()
        assert_array_equal(pure_cluster(merged, gt), c & ~gt)
