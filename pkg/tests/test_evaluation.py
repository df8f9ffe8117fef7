import numpy as np
import pytest

from mvocc.errors import ShapeError, UndefinedMetricError
from mvocc.evaluation import (
    SIGNIFICANCE_LEVEL,
    MetricsReport,
    aupr,
    auroc,
    compare_to_best,
    detection_metrics,
    late_fuse,
    tnr_at_tpr,
    welch_t_test,
)


def _random_instance(seed, size=50):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 8, size=size).astype(float)  # many ties
    labels = np.where(rng.random(size) < 0.4, -1, 1)
    labels[0], labels[1] = -1, 1
    return scores, labels


def _pairwise_auroc(scores, labels):
    neg, pos = scores[labels == -1], scores[labels == 1]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in neg for b in pos)
    return total / (neg.size * pos.size)


def _threshold_aupr(scores, labels):
    n_neg = np.sum(labels == -1)
    previous_recall, total = 0.0, 0.0
    for threshold in sorted(set(scores), reverse=True):
        retrieved = scores >= threshold
        hits = np.sum(retrieved & (labels == -1))
        recall = hits / n_neg
        total += (recall - previous_recall) * hits / np.sum(retrieved)
        previous_recall = recall
    return total


def _threshold_tnr(scores, labels, target=0.95):
    pos, neg = scores[labels == 1], scores[labels == -1]
    for threshold in sorted(set(pos)):
        if np.mean(pos <= threshold) >= target - 1e-12:
            return float(np.mean(neg > threshold))
    raise AssertionError("no threshold reaches the target")


def test_late_fusion_strategies():
    scores = np.array([[0.2, 0.4]])
    assert late_fuse("AVG", scores)[0] == pytest.approx(0.3)
    assert late_fuse("MIN", scores)[0] == pytest.approx(0.2)
    assert late_fuse("MAX", scores)[0] == pytest.approx(0.4)


def test_late_fusion_errors():
    with pytest.raises(ShapeError):
        late_fuse("AVG", np.zeros((0, 2)))
    with pytest.raises(ValueError):
        late_fuse("MEDIAN", np.ones((2, 2)))


def test_perfect_separation():
    scores, labels = np.array([0.9, 0.1, 0.2]), np.array([-1, 1, 1])
    assert auroc(scores, labels) == 1.0
    assert aupr(scores, labels) == 1.0
    assert tnr_at_tpr(scores, labels) == 1.0


def test_all_scores_equal():
    scores, labels = np.full(10, 0.3), np.array([-1] * 3 + [1] * 7)
    assert auroc(scores, labels) == 0.5
    assert aupr(scores, labels) == pytest.approx(0.3)
    assert tnr_at_tpr(scores, labels) == 0.0


def test_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        aupr([0.1, 0.2], [-1, -1])


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force(seed):
    scores, labels = _random_instance(seed)
    assert abs(auroc(scores, labels) - _pairwise_auroc(scores, labels)) < 1e-12
    assert abs(aupr(scores, labels) - _threshold_aupr(scores, labels)) < 1e-12
    assert tnr_at_tpr(scores, labels) == _threshold_tnr(scores, labels)


def test_detection_metrics_keys():
    scores, labels = _random_instance(0)
    assert set(detection_metrics(scores, labels)) == {"auroc", "aupr", "tnr_at_95tpr"}


def test_welch_identical_samples():
    assert welch_t_test([0.5, 0.6, 0.7], [0.5, 0.6, 0.7]) == pytest.approx(1.0)
    assert welch_t_test([0.8] * 4, [0.8] * 4) == 1.0
    assert welch_t_test([0.8] * 4, [0.7] * 4) == 0.0


def test_welch_clear_difference():
    jitter = np.tile([1e-3, -1e-3], 5)
    assert welch_t_test(0.99 + jitter, 0.50 + jitter) < 0.01


def test_welch_reference_value():
    # t = -1.837 with Welch-Satterthwaite dof = 4
    p = welch_t_test([1.0, 2.0, 3.0], [2.5, 3.5, 4.5])
    assert p == pytest.approx(0.1401, abs=1e-3)


def test_compare_to_best():
    reports = {
        "A": MetricsReport("auroc", [0.90, 0.91, 0.92]),
        "B": MetricsReport("auroc", [0.60, 0.61, 0.59]),
        "C": MetricsReport("auroc", [0.89, 0.90, 0.91]),
    }
    best = compare_to_best(reports)
    assert best == "A"
    assert reports["A"].p_value == 1.0
    assert reports["B"].p_value < 0.01
    assert reports["C"].p_value > SIGNIFICANCE_LEVEL


def test_metrics_report_statistics():
    report = MetricsReport("auroc", [0.8, 0.9])
    assert report.mean == pytest.approx(0.85)
    assert report.std == pytest.approx(np.std([0.8, 0.9], ddof=1))
    assert report.to_dict()["values"] == [0.8, 0.9]


@pytest.mark.parametrize("seed", range(20))
def test_auroc_of_negated_scores_is_complement(seed):
    scores, labels = _random_instance(seed)
    assert auroc(scores, labels) + auroc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("transform", [np.exp, lambda s: s**3 + 2.0, lambda s: 10.0 * s - 4.0])
@pytest.mark.parametrize("seed", range(5))
def test_metrics_ignore_increasing_transforms(transform, seed):
    scores, labels = _random_instance(seed)
    original = detection_metrics(scores, labels)
    transformed = detection_metrics(transform(scores), labels)
    for name, value in original.items():
        assert transformed[name] == pytest.approx(value, abs=1e-12), name


@pytest.mark.parametrize("seed", range(5))
def test_duplicated_view_does_not_change_average(seed):
    rng = np.random.default_rng(seed)
    view = rng.normal(size=40)
    labels = np.where(np.arange(40) < 15, -1, 1)
    single = auroc(late_fuse("AVG", view), labels)
    for copies in (2, 3):
        stacked = np.column_stack([view] * copies)
        assert auroc(late_fuse("AVG", stacked), labels) == single
