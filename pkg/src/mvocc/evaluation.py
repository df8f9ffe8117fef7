"""Late fusion of per-view scores, threshold-free OCC metrics and significance tests.

Scores follow the anomaly convention: higher means more anomalous. Labels are +1 for the
positive (normal) class and -1 for the negative class, which is the detection target.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from scipy.stats import ttest_ind
from sklearn.metrics import average_precision_score, roc_auc_score, roc_curve

from .errors import ShapeError, UndefinedMetricError
from .tensor import Tensor

logger = logging.getLogger(__name__)

LateFusion = Literal["AVG", "MIN", "MAX"]
LATE_FUSION_STRATEGIES = ("AVG", "MIN", "MAX")

METRICS = ("auroc", "aupr", "tnr_at_95tpr")
SIGNIFICANCE_LEVEL = 0.05


def late_fuse(strategy: str, scores: Tensor) -> Tensor:
    """
    Combine an N x V score matrix into one score per row.

    Raises:
        ShapeError: If the matrix is empty
        ValueError: If the strategy is unknown
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    if scores.size == 0:
        raise ShapeError("Cannot fuse an empty score matrix")
    if strategy == "AVG":
        return scores.mean(axis=1)
    if strategy == "MIN":
        return scores.min(axis=1)
    if strategy == "MAX":
        return scores.max(axis=1)
    raise ValueError(f"Unknown late fusion '{strategy}', expected one of {LATE_FUSION_STRATEGIES}")


def _split_classes(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores for {labels.size} labels")
    negative = labels == -1
    positive = labels == 1
    if not np.any(negative) or not np.any(positive):
        raise UndefinedMetricError("Metric needs both positive (+1) and negative (-1) labels")
    return scores, negative, positive


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a negative-class datum outscores a positive one, ties counting 1/2."""
    scores, negative, _ = _split_classes(scores, labels)
    return float(roc_auc_score(negative, scores))


def aupr(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Average precision for retrieving the negative class; tied scores form one threshold."""
    scores, negative, _ = _split_classes(scores, labels)
    return float(average_precision_score(negative, scores))


def tnr_at_tpr(scores: Sequence[float], labels: Sequence[int], tpr_target: float = 0.95) -> float:
    """
    True negative rate at the smallest threshold accepting ``tpr_target`` of the positives.

    Positive-class data are accepted when score <= threshold; negative-class data are
    rejected when score > threshold.
    """
    scores, negative, _ = _split_classes(scores, labels)
    # flagging score >= t rejects the positives counted in fpr and the negatives counted in tpr
    rejected_positive, rejected_negative, _ = roc_curve(negative, scores, drop_intermediate=False)
    admissible = rejected_positive <= 1.0 - tpr_target + 1e-12
    return float(rejected_negative[admissible].max())


def detection_metrics(scores: Sequence[float], labels: Sequence[int]) -> Dict[str, float]:
    return {
        "auroc": auroc(scores, labels),
        "aupr": aupr(scores, labels),
        "tnr_at_95tpr": tnr_at_tpr(scores, labels, 0.95),
    }


def welch_t_test(runs_a: Sequence[float], runs_b: Sequence[float]) -> float:
    """
    Two-sided Welch t-test p-value.

    Two zero-variance samples give p = 1.0 when the means are equal, else 0.0.
    """
    a = np.asarray(runs_a, dtype=np.float64)
    b = np.asarray(runs_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError(f"Welch test needs at least 2 runs per sample, got {a.size} and {b.size}")
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    return float(min(1.0, ttest_ind(a, b, equal_var=False).pvalue))


@dataclass
class MetricsReport:
    """Per-repeat metric values with mean, standard deviation and optional p-value."""

    metric: str
    values: List[float]
    p_value: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values, ddof=1)) if len(self.values) > 1 else 0.0

    def to_dict(self) -> Dict[str, object]:
        return {
            "metric": self.metric,
            "values": list(self.values),
            "mean": self.mean,
            "std": self.std,
            "p_value": self.p_value,
        }


def compare_to_best(reports: Dict[str, MetricsReport]) -> Optional[str]:
    """
    Mark the best mean performer and attach Welch p-values of every method against it.

    Returns:
        Name of the best performer (its p-value is 1.0), or None if ``reports`` is empty
    """
    if not reports:
        return None
    best = max(reports, key=lambda name: (reports[name].mean, -sorted(reports).index(name)))
    for name, report in reports.items():
        if name == best:
            report.p_value = 1.0
        elif len(report.values) >= 2 and len(reports[best].values) >= 2:
            report.p_value = welch_t_test(report.values, reports[best].values)
        else:
            report.p_value = None
    return best
