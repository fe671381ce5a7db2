import json
import math

import numpy as np
import pytest

from mmfusion.metrics import (
    MetricError,
    accuracy,
    auc,
    auc_macro_ovr,
    auc_rank,
    build_report,
    precision_macro,
    roc_curve,
)

WORKED_SCORES = [0.1, 0.4, 0.35, 0.8]
WORKED_LABELS = [0, 0, 1, 1]


def pair_enumeration_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def tied_instance(rng):
    n = int(rng.integers(2, 40))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    scores = rng.integers(0, 6, n) / 5.0
    return scores, labels


class TestAccuracy:
    def test_identity(self):
        assert accuracy([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0

    def test_three_of_four(self):
        assert accuracy([0, 1, 2, 2], [0, 1, 2, 1]) == 0.75

    def test_random_predictions(self):
        rng = np.random.default_rng(0)
        labels = np.arange(100_000) % 3
        assert abs(accuracy(rng.integers(0, 3, labels.size), labels) - 1 / 3) <= 0.01

    def test_errors(self):
        with pytest.raises(MetricError):
            accuracy([], [])
        with pytest.raises(MetricError):
            accuracy([0, 1], [0])


class TestPrecision:
    def test_perfect(self):
        assert precision_macro([0, 1, 2], [0, 1, 2]) == 1.0

    def test_hand_confusion_matrix(self):
        assert precision_macro([0, 1, 1, 1], [0, 0, 1, 2]) == pytest.approx(4 / 9, abs=1e-15)

    def test_all_class_zero(self):
        labels = [0, 1, 2] * 5
        assert precision_macro([0] * 15, labels) == pytest.approx(1 / 9, abs=1e-15)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        p, t = rng.integers(0, 3, 50), rng.integers(0, 3, 50)
        perm = rng.permutation(50)
        assert precision_macro(p, t) == precision_macro(p[perm], t[perm])
        assert accuracy(p, t) == accuracy(p[perm], t[perm])


class TestRoc:
    def test_worked_example(self):
        pts = roc_curve(WORKED_SCORES, WORKED_LABELS)
        assert [(p.fpr, p.tpr) for p in pts] == [
            (0, 0), (0, 0.5), (0.5, 0.5), (0.5, 1), (1, 1),
        ]
        assert pts[0].threshold == math.inf
        assert [p.threshold for p in pts[1:]] == [0.8, 0.4, 0.35, 0.1]

    def test_perfect_separation_passes_corner(self):
        pts = roc_curve([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert (0.0, 1.0) in [(p.fpr, p.tpr) for p in pts]

    def test_all_equal_scores(self):
        pts = roc_curve([0.5] * 6, [0, 1, 0, 1, 1, 0])
        assert [(p.fpr, p.tpr) for p in pts] == [(0, 0), (1, 1)]

    def test_single_class_is_error(self):
        with pytest.raises(MetricError):
            roc_curve([0.1, 0.2], [1, 1])
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [0, 0])

    def test_monotone_from_origin_to_corner(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            scores, labels = tied_instance(rng)
            pts = roc_curve(scores, labels)
            assert (pts[0].fpr, pts[0].tpr) == (0, 0)
            assert (pts[-1].fpr, pts[-1].tpr) == (1, 1)
            assert all(b.fpr >= a.fpr and b.tpr >= a.tpr for a, b in zip(pts, pts[1:]))


class TestAuc:
    def test_worked_example(self):
        assert pair_enumeration_auc(WORKED_SCORES, WORKED_LABELS) == 0.75
        assert auc(WORKED_SCORES, WORKED_LABELS) == 0.75
        assert auc_rank(WORKED_SCORES, WORKED_LABELS) == 0.75

    def test_perfect_and_ties(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert auc([0.3] * 5, [0, 1, 0, 1, 1]) == 0.5

    def test_trapezoid_equals_rank_statistic(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            scores, labels = tied_instance(rng)
            assert abs(auc(scores, labels) - auc_rank(scores, labels)) <= 1e-12

    def test_matches_pair_enumeration(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            scores, labels = tied_instance(rng)
            assert auc(scores, labels) == pytest.approx(
                pair_enumeration_auc(scores, labels), abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            scores, labels = tied_instance(rng)
            base = auc(scores, labels)
            assert abs(auc(np.exp(scores), labels) - base) <= 1e-12
            assert abs(auc(3.0 * scores - 7.0, labels) - base) <= 1e-12


class TestMacroAuc:
    def test_one_hot_perfect(self):
        labels = [0, 1, 2, 2, 1, 0]
        assert auc_macro_ovr(np.eye(3)[labels], labels) == 1.0

    def test_uniform(self):
        labels = [0, 1, 2, 0]
        assert auc_macro_ovr(np.full((4, 3), 1 / 3), labels) == 0.5

    def test_random_instance_vs_enumeration(self):
        rng = np.random.default_rng(20)
        labels = np.array([0, 1, 2] * 6 + [0, 1])
        probs = rng.dirichlet(np.ones(3), size=20)
        expected = np.mean([pair_enumeration_auc(probs[:, c], labels == c) for c in range(3)])
        assert auc_macro_ovr(probs, labels) == pytest.approx(expected, abs=1e-12)

    def test_missing_class(self):
        with pytest.raises(MetricError):
            auc_macro_ovr(np.full((2, 3), 1 / 3), [0, 1])


class TestReport:
    def test_fields_and_accounting(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, 60)
        probs = rng.dirichlet(np.ones(3), size=60)
        r = build_report(probs, labels)
        assert r.n == 60
        conf = np.array(r.confusion)
        assert conf.sum() == 60
        np.testing.assert_array_equal(conf.sum(axis=1), np.bincount(labels, minlength=3))
        assert 0 <= r.accuracy <= 1 and 0 <= r.precision_macro <= 1 and 0 <= r.auc_macro <= 1
        assert r.auc_macro == pytest.approx(auc_macro_ovr(probs, labels), abs=1e-15)
        doc = json.loads(r.to_json())
        assert set(doc) == {"accuracy", "precision_macro", "auc_macro", "per_class",
                            "confusion", "n", "timing"}
        assert doc["per_class"][0]["roc_points"][0]["threshold"] == "inf"

    def test_single_class_flags_auc_undefined(self):
        r = build_report(np.full((3, 3), 1 / 3), [1, 1, 1])
        assert r.auc_macro is None
        assert all(c.auc is None for c in r.per_class)

    def test_roc_csv(self, tmp_path):
        labels = [0, 1, 2, 0]
        r = build_report(np.eye(3)[labels], labels)
        path = tmp_path / "roc.csv"
        r.write_roc_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "class,threshold,fpr,tpr"
        assert len(lines) > 3
