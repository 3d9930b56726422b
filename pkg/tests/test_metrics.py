import itertools
import math
from collections import Counter

import numpy as np
import pytest

from mebinncd.metrics import (
    NonFiniteCostError,
    ari,
    box_iou,
    clustering_report,
    detection_rates,
    hungarian_match,
    matched_f1,
    nmi,
)


def permutation_oracle(cost):
    """Exhaustive search over all assignments."""
    k = len(cost)
    best = None
    for perm in itertools.permutations(range(k)):
        total = sum(cost[i][perm[i]] for i in range(k))
        if best is None or total < best:
            best = total
    return best


class TestHungarian:
    def test_identity_cost(self):
        cost = np.ones((4, 4)) - np.eye(4)
        assignment = hungarian_match(cost)
        assert assignment.tolist() == [0, 1, 2, 3]

    def test_3x3_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            cost = rng.integers(0, 20, (3, 3)).astype(float)
            assignment = hungarian_match(cost)
            total = sum(cost[i, assignment[i]] for i in range(3))
            assert total == pytest.approx(permutation_oracle(cost.tolist()))

    def test_all_k_up_to_7(self):
        rng = np.random.default_rng(1)
        for _ in range(60):
            k = int(rng.integers(2, 8))
            cost = rng.random((k, k))
            assignment = hungarian_match(cost)
            assert sorted(assignment.tolist()) == list(range(k))
            total = sum(cost[i, assignment[i]] for i in range(k))
            assert total <= permutation_oracle(cost.tolist()) + 1e-12

    def test_non_finite_rejected(self):
        cost = np.zeros((2, 2))
        cost[0, 0] = np.inf
        with pytest.raises(NonFiniteCostError):
            hungarian_match(cost)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            hungarian_match(np.zeros((2, 3)))


def nmi_oracle(labels_true, labels_pred):
    """Entropy-based reference: H(T) + H(P) - H(T, P) from raw counts."""
    n = len(labels_true)

    def entropy(counts):
        return -sum(c / n * math.log(c / n) for c in counts if c)

    h_t = entropy(Counter(labels_true).values())
    h_p = entropy(Counter(labels_pred).values())
    h_joint = entropy(Counter(zip(labels_true, labels_pred)).values())
    if h_t <= 0 or h_p <= 0:
        return 0.0
    return (h_t + h_p - h_joint) / ((h_t + h_p) / 2)


def ari_oracle(labels_true, labels_pred):
    """All-pairs counting reference."""
    n = len(labels_true)
    a = b = c = d = 0
    for i in range(n):
        for j in range(i + 1, n):
            same_t = labels_true[i] == labels_true[j]
            same_p = labels_pred[i] == labels_pred[j]
            if same_t and same_p:
                a += 1
            elif same_t and not same_p:
                b += 1
            elif not same_t and same_p:
                c += 1
            else:
                d += 1
    denom = (a + b) * (b + d) + (a + c) * (c + d)
    if denom == 0:
        return 1.0
    return 2.0 * (a * d - b * c) / denom


class TestNmi:
    def test_identical(self):
        assert nmi([0, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(1.0)

    def test_identical_up_to_relabeling(self):
        assert nmi([0, 0, 1, 1], [5, 5, 2, 2]) == pytest.approx(1.0)

    def test_constant_prediction_is_zero(self):
        assert nmi([0, 1, 0, 1], [3, 3, 3, 3]) == 0.0

    def test_both_constant_is_zero(self):
        assert nmi([1, 1, 1], [0, 0, 0]) == 0.0

    def test_contingency_example(self):
        got = nmi([0, 0, 1, 1], [0, 1, 1, 1])
        assert got == pytest.approx(nmi_oracle([0, 0, 1, 1], [0, 1, 1, 1]), abs=1e-12)

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            n = int(rng.integers(2, 13))
            t = rng.integers(0, 4, n).tolist()
            p = rng.integers(0, 4, n).tolist()
            assert nmi(t, p) == pytest.approx(nmi_oracle(t, p), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nmi([0, 1], [0])


class TestAri:
    def test_identical(self):
        assert ari([0, 1, 2, 0], [0, 1, 2, 0]) == pytest.approx(1.0)

    def test_relabeled_pair(self):
        assert ari([0, 1], [1, 0]) == pytest.approx(1.0)

    def test_random_matches_pair_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            n = int(rng.integers(2, 13))
            t = rng.integers(0, 4, n).tolist()
            p = rng.integers(0, 4, n).tolist()
            assert ari(t, p) == pytest.approx(ari_oracle(t, p), abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            ari([0], [0])


class TestMatchedF1:
    def test_identical_partitions(self):
        f1, mapping = matched_f1([0, 0, 1, 1], [4, 4, 9, 9])
        assert f1 == pytest.approx(1.0)
        assert mapping == {4: 0, 9: 1}

    def test_constant_prediction_on_balanced_truth(self):
        # single cluster matched to one class: P=0.5, R=1 -> F1=2/3; other class 0
        f1, _ = matched_f1([0, 0, 1, 1], [7, 7, 7, 7])
        assert f1 == pytest.approx((2 / 3) / 2)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(4, 14))
            t = rng.integers(0, 3, n).tolist()
            p = rng.integers(0, 3, n).tolist()
            f1_a, _ = matched_f1(t, p)
            relabel = {0: 2, 1: 0, 2: 1}
            f1_b, _ = matched_f1(t, [relabel[x] for x in p])
            assert f1_a == pytest.approx(f1_b, abs=1e-12)

    def test_micro_is_matched_accuracy(self):
        t = [0, 0, 0, 1, 1, 1]
        p = [2, 2, 3, 3, 3, 3]
        micro, _ = matched_f1(t, p, average="micro")
        assert micro == pytest.approx(5 / 6)

    def test_more_clusters_than_classes(self):
        f1, mapping = matched_f1([0, 0, 0, 0], [1, 1, 2, 2])
        # one cluster matched: P=1, R=0.5 -> F1=2/3; one true class total
        assert f1 == pytest.approx(2 / 3)
        assert len(mapping) == 1


class TestClusteringReport:
    def test_bundles_confusion(self):
        report = clustering_report(["a", "a", "b", "b"], [0, 0, 1, 1])
        assert report.f1 == pytest.approx(1.0)
        assert report.nmi == pytest.approx(1.0)
        assert report.ari == pytest.approx(1.0)
        assert report.confusion.tolist() == [[2, 0], [0, 2]]
        assert report.confusion.sum(axis=1).tolist() == [2, 2]


def box_mask(shape, box):
    mask = np.zeros(shape, dtype=np.uint8)
    x0, y0, x1, y1 = box
    mask[y0 : y1 + 1, x0 : x1 + 1] = 1
    return mask


class TestDetectionRates:
    def test_perfect_prediction(self):
        gt = [box_mask((20, 20), (2, 2, 8, 8))]
        report = detection_rates(gt, gt)
        assert report.fpr == 0.0
        assert report.fnr == 0.0
        assert report.matches[0]["iou"] == pytest.approx(1.0)

    def test_empty_prediction(self):
        gt = [box_mask((20, 20), (2, 2, 8, 8))]
        pred = [np.zeros((20, 20), dtype=np.uint8)]
        report = detection_rates(gt, pred)
        assert report.fnr == 1.0
        assert report.fpr == 0.0

    def test_false_positive_on_normal_image(self):
        gt = [np.zeros((20, 20), dtype=np.uint8)]
        pred = [box_mask((20, 20), (2, 2, 8, 8))]
        report = detection_rates(gt, pred)
        assert report.fpr == 1.0
        assert report.fnr == 0.0  # no ground-truth regions anywhere

    def test_strict_iou_threshold(self):
        # two 1x10 row boxes overlapping by k columns: IoU = k / (20 - k)
        # k=2 -> 2/18 = 0.111 > 0.1 detected; k=1 -> 1/19 = 0.0526 <= 0.1 missed
        gt_box = (0, 0, 9, 0)
        assert box_iou(gt_box, (8, 0, 17, 0)) == pytest.approx(2 / 18)
        assert box_iou(gt_box, (9, 0, 18, 0)) == pytest.approx(1 / 19)
        gt = [box_mask((4, 24), gt_box)]
        detected = detection_rates(gt, [box_mask((4, 24), (8, 0, 17, 0))])
        missed = detection_rates(gt, [box_mask((4, 24), (9, 0, 18, 0))])
        assert detected.fnr == 0.0
        assert missed.fnr == 1.0

    def test_image_order_symmetric(self):
        gt = [box_mask((20, 20), (2, 2, 8, 8)), np.zeros((20, 20), dtype=np.uint8)]
        pred = [box_mask((20, 20), (3, 3, 9, 9)), box_mask((20, 20), (12, 12, 15, 15))]
        fwd = detection_rates(gt, pred)
        rev = detection_rates(gt[::-1], pred[::-1])
        assert fwd.fpr == pytest.approx(rev.fpr)
        assert fwd.fnr == pytest.approx(rev.fnr)

    def test_pair_mismatch(self):
        with pytest.raises(ValueError):
            detection_rates([np.zeros((4, 4), np.uint8)], [])
