import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixadapt.losses import (
    MemoryBank,
    PrototypeBank,
    attention_centers,
    blend_centers,
    entropy,
    entropy_rows,
    kmeans_prototypes,
    loss_cls,
    loss_mi,
    loss_self_proto,
    loss_self_simplified,
    similarity_distribution,
    soft_cross_entropy,
    update_centers,
    update_memory_bank,
)
from tests.conftest import random_simplex

LN2 = 0.6931471805599453


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


simplex_strategy = st.integers(min_value=2, max_value=6).flatmap(
    lambda c: st.lists(st.floats(0.01, 10.0), min_size=c, max_size=c)
)


class TestEntropy:
    def test_one_hot_is_zero(self):
        assert entropy([1.0, 0.0, 0.0]) == 0.0

    def test_uniform_two_classes(self):
        assert abs(entropy([0.5, 0.5]) - LN2) < 1e-12

    def test_skewed_value(self):
        # -0.9 ln 0.9 - 0.1 ln 0.1, evaluated at double precision
        assert abs(entropy([0.9, 0.1]) - 0.32508297339144825) < 1e-9

    def test_non_simplex_rejected(self):
        with pytest.raises(ValueError):
            entropy([0.5, 0.4])
        with pytest.raises(ValueError):
            entropy([1.2, -0.2])

    @given(simplex_strategy)
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, raw):
        p = np.asarray(raw) / np.sum(raw)
        h = entropy(p)
        assert -1e-12 <= h <= math.log(len(p)) + 1e-9


class TestLossCls:
    def test_perfect_prediction_zero(self):
        probs = np.array([[0.0, 1.0, 0.0]])
        assert loss_cls(probs, np.array([1])) == 0.0

    def test_uniform_ten_classes(self):
        probs = np.full((1, 10), 0.1)
        assert abs(loss_cls(probs, np.array([3])) - math.log(10)) < 1e-9

    def test_mean_of_two_samples(self):
        probs = np.array([[1.0, 0.0], [0.5, 0.5]])
        labels = np.array([0, 1])
        assert abs(loss_cls(probs, labels) - 0.34657359027997264) < 1e-9

    def test_missing_label_rejected(self):
        with pytest.raises(ValueError, match="label"):
            loss_cls(np.array([[0.5, 0.5]]), np.array([-1]))


class TestLossMI:
    def test_all_uniform_rows_zero(self):
        probs = np.full((8, 4), 0.25)
        assert abs(loss_mi(probs)) < 1e-12

    def test_one_hot_rows_covering_classes(self):
        probs = np.eye(4)
        assert abs(loss_mi(probs) - (-math.log(4))) < 1e-9

    def test_identical_rows_cancel(self):
        rng = np.random.default_rng(0)
        row = random_simplex(rng, 1, 5)[0]
        probs = np.tile(row, (13, 1))
        assert abs(loss_mi(probs)) < 1e-12

    def test_bounds_on_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            probs = random_simplex(rng, rng.integers(1, 20), rng.integers(2, 8))
            v = loss_mi(probs)
            assert -math.log(probs.shape[1]) - 1e-9 <= v <= 1e-9

    def test_row_permutation_invariant(self):
        rng = np.random.default_rng(2)
        probs = random_simplex(rng, 12, 4)
        v1 = loss_mi(probs)
        v2 = loss_mi(probs[rng.permutation(12)])
        assert abs(v1 - v2) < 1e-12

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            loss_mi(np.empty((0, 4)))


class TestSoftCrossEntropy:
    def test_matching_one_hots_zero(self):
        y = np.array([[0.0, 1.0]])
        assert soft_cross_entropy(y, y) == 0.0

    def test_self_entropy_value(self):
        p = np.array([[0.7, 0.3]])
        assert abs(soft_cross_entropy(p, p) - 0.6108643020548935) < 1e-9

    def test_clipped_log_is_finite(self):
        probs = np.array([[1.0, 0.0]])
        y = np.array([[0.7, 0.3]])
        v = soft_cross_entropy(probs, y)
        assert np.isfinite(v)
        assert v > 0.3 * math.log(1e11)  # dominated by the clipping floor

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            soft_cross_entropy(np.full((2, 3), 1 / 3), np.full((2, 2), 0.5))

    def test_cross_entropy_at_least_entropy(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            c = rng.integers(2, 6)
            p = random_simplex(rng, 4, c)
            y = random_simplex(rng, 4, c)
            assert soft_cross_entropy(p, y) >= soft_cross_entropy(y, y) - 1e-9


def _exhaustive_kmeans(points, k):
    """Best assignment by scanning every labeling (tiny instances only)."""
    n = len(points)
    best, best_cost = None, np.inf
    for assign in itertools.product(range(k), repeat=n):
        assign = np.array(assign)
        if len(set(assign.tolist())) < k:
            continue
        cost = 0.0
        for j in range(k):
            cluster = points[assign == j]
            cost += ((cluster - cluster.mean(axis=0)) ** 2).sum()
        if cost < best_cost - 1e-12:
            best_cost, best = cost, assign
    return best, best_cost


class TestKMeans:
    def test_two_blobs_match_exhaustive_oracle(self):
        rng = np.random.default_rng(4)
        pts = np.vstack(
            [rng.normal([3, 0], 0.4, size=(5, 2)), rng.normal([-3, 0], 0.4, size=(5, 2))]
        )
        centers, assign = kmeans_prototypes(pts, 2, seed=0)
        oracle_assign, _ = _exhaustive_kmeans(pts, 2)
        # same partition up to label swap
        agreement = (assign == oracle_assign).mean()
        assert agreement in (0.0, 1.0)
        blob_means = np.array([pts[oracle_assign == j].mean(axis=0) for j in range(2)])
        expected = _unit(blob_means[0]), _unit(blob_means[1])
        match0 = min(np.abs(centers[0] - e).max() for e in expected)
        assert match0 < 1e-9

    def test_random_small_instances_hit_partition_optimum(self):
        rng = np.random.default_rng(5)
        for trial in range(8):
            pts = rng.normal(size=(rng.integers(6, 11), 2))
            k = 2
            _, assign = kmeans_prototypes(pts, k, seed=trial, n_init=12)
            cost = sum(
                ((pts[assign == j] - pts[assign == j].mean(axis=0)) ** 2).sum() for j in range(k)
            )
            _, best_cost = _exhaustive_kmeans(pts, k)
            assert cost <= best_cost + 1e-9

    def test_single_cluster_is_normalized_mean(self):
        rng = np.random.default_rng(6)
        pts = rng.normal([1, 2], 0.3, size=(7, 2))
        centers, assign = kmeans_prototypes(pts, 1, seed=0)
        np.testing.assert_allclose(centers[0], _unit(pts.mean(axis=0)), atol=1e-12)
        assert (assign == 0).all()

    def test_duplication_invariance(self):
        rng = np.random.default_rng(7)
        pts = np.vstack([rng.normal([2, 0], 0.3, (6, 2)), rng.normal([-2, 0], 0.3, (6, 2))])
        doubled = np.vstack([pts, pts])
        c1, _ = kmeans_prototypes(pts, 2, seed=1)
        c2, _ = kmeans_prototypes(doubled, 2, seed=1)
        d = min(
            np.abs(c1 - c2).max(), np.abs(c1 - c2[::-1]).max()
        )
        assert d < 1e-9

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            kmeans_prototypes(np.zeros((2, 3)), 3, seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(20, 3))
        c1, a1 = kmeans_prototypes(pts, 3, seed=9)
        c2, a2 = kmeans_prototypes(pts, 3, seed=9)
        np.testing.assert_array_equal(c1, c2)
        np.testing.assert_array_equal(a1, a2)


class TestCenterUpdates:
    def test_zero_momentum_takes_new(self):
        old = np.array([[1.0, 0.0], [0.0, 1.0]])
        new = np.array([[0.0, -1.0], [1.0, 0.0]])
        out = update_centers(old, new, momentum=0.0)
        # greedy matching pairs each old center with the closest new center
        np.testing.assert_allclose(out[0], [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(out[1], [0.0, -1.0], atol=1e-12)

    def test_full_momentum_keeps_old(self):
        rng = np.random.default_rng(9)
        old = rng.normal(size=(3, 4))
        old /= np.linalg.norm(old, axis=1, keepdims=True)
        new = rng.normal(size=(3, 4))
        out = update_centers(old, new, momentum=1.0)
        np.testing.assert_allclose(out, old, atol=1e-12)

    def test_midpoint_normalized(self):
        out = update_centers(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), momentum=0.5)
        np.testing.assert_allclose(out[0], [0.7071067811865476, 0.7071067811865476], atol=1e-9)

    def test_blend_returns_relabeling(self):
        old = np.eye(3)
        new = old[[2, 0, 1]]  # permuted copy
        blended, relabel = blend_centers(old, new, momentum=0.5)
        np.testing.assert_allclose(blended, old, atol=1e-12)
        # relabel maps a fresh-center index to the old slot it blended into,
        # so a sample assigned to new[j] lands on the matching old center
        for j in range(3):
            np.testing.assert_allclose(old[relabel[j]], new[j], atol=1e-12)


class TestSimilarityDistribution:
    def test_equidistant_uniform(self):
        centers = np.eye(3)
        f = _unit([1.0, 1.0, 1.0])
        np.testing.assert_allclose(similarity_distribution(f, centers, 0.7), [1 / 3] * 3, atol=1e-12)

    def test_softmax_value(self):
        centers = np.array([[1.0, 0.0], [0.0, 1.0]])
        f = np.array([1.0, 0.0])  # dots [1, 0]
        p = similarity_distribution(f, centers, 1.0)
        np.testing.assert_allclose(p, [0.7310585786300049, 0.26894142136999512], atol=1e-9)

    def test_low_temperature_sharpens(self):
        centers = np.array([[1.0, 0.0], [0.0, 1.0]])
        f = np.array([1.0, 0.0])
        p = similarity_distribution(f, centers, 1e-3)
        assert p[0] > 1.0 - 1e-12

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError, match="temperature"):
            similarity_distribution(np.array([1.0, 0.0]), np.eye(2), 0.0)


def _direct_self_proto(fs, a_s, ft, a_t, bank, t):
    """Independent direct-summation oracle for the prototype self loss."""
    total = 0.0

    def softmax(v):
        e = np.exp(v - v.max())
        return e / e.sum()

    for i in range(len(fs)):
        p_same = softmax(bank.source_centers @ fs[i] / t)
        p_cross = softmax(bank.target_centers @ fs[i] / t)
        total += -math.log(p_same[a_s[i]])
        total += -(p_cross * np.log(p_cross)).sum()
    for i in range(len(ft)):
        p_same = softmax(bank.target_centers @ ft[i] / t)
        p_cross = softmax(bank.source_centers @ ft[i] / t)
        total += -math.log(p_same[a_t[i]])
        total += -(p_cross * np.log(p_cross)).sum()
    return total / (len(fs) + len(ft))


class TestLossSelfProto:
    def _bank(self, c, d, seed=0):
        rng = np.random.default_rng(seed)
        sc = rng.normal(size=(c, d))
        tc = rng.normal(size=(c, d))
        sc /= np.linalg.norm(sc, axis=1, keepdims=True)
        tc /= np.linalg.norm(tc, axis=1, keepdims=True)
        return PrototypeBank(sc, tc, np.zeros(1, np.int64), np.zeros(1, np.int64), 0.5)

    def test_hand_built_geometry_matches_oracle(self):
        rng = np.random.default_rng(10)
        fs = rng.normal(size=(4, 3))
        fs /= np.linalg.norm(fs, axis=1, keepdims=True)
        ft = rng.normal(size=(4, 3))
        ft /= np.linalg.norm(ft, axis=1, keepdims=True)
        bank = self._bank(2, 3, seed=11)
        a_s = np.array([0, 1, 0, 1])
        a_t = np.array([1, 1, 0, 0])
        got = loss_self_proto(fs, a_s, ft, a_t, bank, 0.5)
        want = _direct_self_proto(fs, a_s, ft, a_t, bank, 0.5)
        assert abs(got - want) < 1e-8

    def test_single_cluster_gives_zero(self):
        rng = np.random.default_rng(40)
        feats = rng.normal(size=(5, 3))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        center = feats.mean(axis=0, keepdims=True)
        center /= np.linalg.norm(center)
        bank = PrototypeBank(center, center.copy(), None, None, 0.5)
        zeros = np.zeros(5, np.int64)
        assert loss_self_proto(feats, zeros, feats, zeros, bank, 0.3) == 0.0

    def test_sharp_limit_with_coinciding_centers(self):
        # features exactly at their own centers, orthogonal center stack,
        # source and target centers coincide: every term collapses to ~0
        centers = np.eye(3)
        bank = PrototypeBank(centers, centers, None, None, 0.5)
        feats = centers.copy()
        assign = np.arange(3)
        v = loss_self_proto(feats, assign, feats, assign, bank, temperature=0.01)
        assert v < 1e-9

    def test_empty_domain_rejected(self):
        bank = self._bank(2, 3)
        with pytest.raises(ValueError, match="both domains"):
            loss_self_proto(np.empty((0, 3)), np.empty(0, int), np.ones((1, 3)), np.zeros(1, int), bank, 0.5)


class TestLossSelfSimplified:
    def test_identical_bank_features_give_log_c(self):
        c, d = 4, 6
        feats = np.tile(_unit(np.arange(1, d + 1.0)), (10, 1))
        bank = MemoryBank.initialize(feats)
        preds = random_simplex(np.random.default_rng(12), 10, c)
        tf = np.random.default_rng(13).normal(size=(5, d))
        tf /= np.linalg.norm(tf, axis=1, keepdims=True)
        v = loss_self_simplified(bank, preds, tf, temperature=0.2)
        assert abs(v - math.log(c)) < 1e-9

    def test_one_hot_predictions_recover_class_means(self):
        rng = np.random.default_rng(14)
        f0 = rng.normal([2, 0, 0], 0.1, size=(6, 3))
        f1 = rng.normal([0, 2, 0], 0.1, size=(6, 3))
        feats = np.vstack([f0, f1])
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        preds = np.zeros((12, 2))
        preds[:6, 0] = 1.0
        preds[6:, 1] = 1.0
        centers = attention_centers(feats, preds)
        np.testing.assert_allclose(centers[0], _unit(feats[:6].sum(axis=0)), atol=1e-12)
        np.testing.assert_allclose(centers[1], _unit(feats[6:].sum(axis=0)), atol=1e-12)

    def test_sharp_limit_at_center(self):
        feats = np.eye(3)
        bank = MemoryBank.initialize(feats)
        preds = np.eye(3)
        target = feats[1][None, :]
        v = loss_self_simplified(bank, preds, target, temperature=0.01)
        assert v < 1e-9

    def test_degenerate_center_named(self):
        feats = np.vstack([np.eye(2), -np.eye(2)])  # class sums cancel
        preds = np.array([[1.0, 0], [0, 1.0], [1.0, 0], [0, 1.0]])
        bank = MemoryBank.initialize(feats)
        with pytest.raises(ValueError, match="class 0"):
            loss_self_simplified(bank, preds, np.array([[1.0, 0.0]]), 0.2)


class TestMemoryBank:
    def test_zero_momentum_is_fresh(self):
        rng = np.random.default_rng(15)
        bank = MemoryBank.initialize(rng.normal(size=(5, 3)), momentum=0.0)
        fresh = rng.normal(size=(5, 3))
        out = update_memory_bank(bank, fresh)
        np.testing.assert_allclose(out.features, fresh / np.linalg.norm(fresh, axis=1, keepdims=True), atol=1e-12)

    def test_midpoint(self):
        bank = MemoryBank(np.array([[1.0, 0.0]]), momentum=0.5)
        out = update_memory_bank(bank, np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(out.features[0], [0.7071067811865476, 0.7071067811865476], atol=1e-12)

    def test_converges_to_constant_input(self):
        # with unit-norm inputs (what the model produces) each update bisects
        # the angle, so 40 iterations land well inside 1e-6
        rng = np.random.default_rng(16)
        bank = MemoryBank.initialize(rng.normal(size=(4, 3)), momentum=0.5)
        fresh = rng.normal(size=(4, 3))
        fresh /= np.linalg.norm(fresh, axis=1, keepdims=True)
        for _ in range(40):
            bank = update_memory_bank(bank, fresh)
        assert np.abs(bank.features - fresh).max() < 1e-6

    def test_rows_stay_unit_norm(self):
        rng = np.random.default_rng(17)
        bank = MemoryBank.initialize(rng.normal(size=(6, 4)), momentum=0.3)
        for _ in range(10):
            bank = update_memory_bank(bank, rng.normal(size=(6, 4)))
            np.testing.assert_allclose(np.linalg.norm(bank.features, axis=1), 1.0, atol=1e-5)


def test_prototype_bank_update_keeps_unit_norm_and_valid_assignments():
    rng = np.random.default_rng(18)
    fs = rng.normal(size=(30, 4))
    ft = rng.normal(size=(25, 4))
    bank = PrototypeBank.initialize(fs, ft, num_clusters=3, seed=0)
    for step in range(3):
        fs = rng.normal(size=(30, 4))
        ft = rng.normal(size=(25, 4))
        bank = bank.updated(fs, ft, num_clusters=3, seed=step + 1)
        np.testing.assert_allclose(np.linalg.norm(bank.source_centers, axis=1), 1.0, atol=1e-5)
        np.testing.assert_allclose(np.linalg.norm(bank.target_centers, axis=1), 1.0, atol=1e-5)
        assert set(bank.source_assign.tolist()) <= {0, 1, 2}
        assert set(bank.target_assign.tolist()) <= {0, 1, 2}
