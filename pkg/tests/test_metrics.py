import numpy as np
import pytest

from stma.metrics import (
    confusion_counts,
    evaluate_predictions,
    mann_whitney_auc,
    roc_auc_trapezoid,
)


class TestAuc:
    def test_perfect_ranking(self):
        labels = [1, 1, 0, 0]
        scores = [0.9, 0.8, 0.2, 0.1]
        assert roc_auc_trapezoid(labels, scores) == 1.0
        report = evaluate_predictions(labels, scores)
        assert report.accuracy == 1.0
        assert report.auc == 1.0

    def test_constant_score_is_half(self):
        labels = [1, 0, 1, 0]
        scores = [0.5] * 4
        assert roc_auc_trapezoid(labels, scores) == 0.5

    def test_single_class_undefined(self):
        assert roc_auc_trapezoid([1, 1, 1], [0.2, 0.5, 0.9]) is None
        assert mann_whitney_auc([0, 0], [0.2, 0.5]) is None
        report = evaluate_predictions([1, 1], [0.9, 0.8])
        assert report.auc is None
        assert report.accuracy == 1.0

    def test_trapezoid_equals_mann_whitney(self):
        rng = np.random.default_rng(17)
        for trial in range(50):
            n = int(rng.integers(5, 60))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # quantized scores force plenty of ties
            scores = np.round(rng.random(size=n), 1)
            a = roc_auc_trapezoid(labels, scores)
            b = mann_whitney_auc(labels, scores)
            assert abs(a - b) < 1e-9, f"trial {trial}: {a} vs {b}"

    def test_reversed_ranking_is_zero(self):
        assert roc_auc_trapezoid([0, 0, 1, 1], [0.9, 0.8, 0.2, 0.1]) == 0.0


class TestConfusion:
    def test_hand_computed_fixture(self):
        # TP=2, FP=1, FN=1, TN=2
        labels = [1, 1, 0, 1, 0, 0]
        scores = [0.9, 0.8, 0.7, 0.2, 0.3, 0.1]
        report = evaluate_predictions(labels, scores)
        assert (report.tp, report.fp, report.fn, report.tn) == (2, 1, 1, 2)
        assert report.precision == pytest.approx(2 / 3)
        assert report.recall == pytest.approx(2 / 3)
        assert report.f1 == pytest.approx(2 / 3)
        assert report.accuracy == pytest.approx(4 / 6)

    def test_counts(self):
        assert confusion_counts([1, 0, 1, 0], [1, 1, 0, 0]) == (1, 1, 1, 1)

    def test_f1_zero_when_no_positive_predictions(self):
        report = evaluate_predictions([1, 0], [0.1, 0.2])
        assert report.precision == 0.0
        assert report.f1 == 0.0

    def test_accuracy_consistent_with_counts(self):
        rng = np.random.default_rng(23)
        labels = rng.integers(0, 2, size=40)
        scores = rng.random(size=40)
        r = evaluate_predictions(labels, scores)
        assert r.accuracy == pytest.approx(
            (r.tp + r.tn) / (r.tp + r.fp + r.fn + r.tn))
