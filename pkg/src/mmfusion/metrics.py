"""Classification metrics: accuracy, macro precision, ROC curves and AUC.

AUC is computed two ways: trapezoidal area under the threshold-sweep ROC
curve (:func:`auc`) and the Mann-Whitney rank statistic
(:func:`auc_rank`). The two must agree; the tests use one to check the
other.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
import numpy as np
from scipy.stats import rankdata

NUM_CLASSES = 3


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass
class ClassMetrics:
    precision: float
    auc: float | None
    roc_points: list[RocPoint] = field(default_factory=list)


@dataclass
class EvalReport:
    accuracy: float
    precision_macro: float
    auc_macro: float | None
    per_class: list[ClassMetrics]
    confusion: list[list[int]]
    n: int
    timing: dict | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        for cm in d["per_class"]:
            for pt in cm["roc_points"]:
                # JSON has no infinity; the sentinel threshold is written as a string.
                if pt["threshold"] == float("inf"):
                    pt["threshold"] = "inf"
        if not include_timing:
            d.pop("timing")
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2)

    def write_roc_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "threshold", "fpr", "tpr"])
            for c, cm in enumerate(self.per_class):
                for p in cm.roc_points:
                    w.writerow([c, repr(p.threshold), repr(p.fpr), repr(p.tpr)])


def _check_pair(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise MetricError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise MetricError("empty input")
    return pred, true


def accuracy(pred_labels, true_labels) -> float:
    pred, true = _check_pair(pred_labels, true_labels)
    return int(np.sum(pred == true)) / pred.size


def confusion_matrix(pred_labels, true_labels, classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with rows indexed by true label and columns by prediction."""
    pred, true = _check_pair(pred_labels, true_labels)
    m = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(m, (true, pred), 1)
    return m


def class_precisions(pred_labels, true_labels, classes: int = NUM_CLASSES) -> list[float]:
    m = confusion_matrix(pred_labels, true_labels, classes)
    predicted = m.sum(axis=0)
    # A class that is never predicted scores 0.
    return [float(m[c, c] / predicted[c]) if predicted[c] else 0.0 for c in range(classes)]


def precision_macro(pred_labels, true_labels, classes: int = NUM_CLASSES) -> float:
    return float(np.mean(class_precisions(pred_labels, true_labels, classes)))


def _binary_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if labels.all() or not labels.any():
        raise MetricError("ROC/AUC undefined: need at least one positive and one negative label")
    return scores, labels


def roc_curve(scores, binary_labels) -> list[RocPoint]:
    """ROC points for thresholds at +inf and each distinct score, descending.

    A sample is predicted positive when its score is >= the threshold.
    """
    scores, labels = _binary_inputs(scores, binary_labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # Last index of each run of equal scores.
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    p, n = tp[-1], fp[-1]
    points = [RocPoint(0.0, 0.0, float("inf"))]
    points += [RocPoint(fp[i] / n, tp[i] / p, float(s[i])) for i in ends]
    return points


def auc(scores, binary_labels) -> float:
    """Trapezoidal area under :func:`roc_curve`."""
    pts = roc_curve(scores, binary_labels)
    area = 0.0
    for a, b in zip(pts, pts[1:]):
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return area


def auc_rank(scores, binary_labels) -> float:
    """Mann-Whitney U / (P * N); tied pairs count one half."""
    scores, labels = _binary_inputs(scores, binary_labels)
    ranks = rankdata(scores)
    p = int(labels.sum())
    n = labels.size - p
    u = ranks[labels].sum() - p * (p + 1) / 2.0
    return float(u / (p * n))


def auc_macro_ovr(prob_matrix, true_labels, classes: int = NUM_CLASSES) -> float:
    probs = np.asarray(prob_matrix, dtype=np.float64)
    true = np.asarray(true_labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape != (true.size, classes):
        raise MetricError(f"probability matrix {probs.shape} does not match {true.size} labels")
    missing = [c for c in range(classes) if not np.any(true == c)]
    if missing:
        raise MetricError(f"class(es) {missing} absent from labels; macro AUC undefined")
    return float(np.mean([auc(probs[:, c], true == c) for c in range(classes)]))


def build_report(prob_matrix, true_labels, classes: int = NUM_CLASSES) -> EvalReport:
    """Fill every :class:`EvalReport` field from predicted probabilities.

    AUC fields are ``None`` for classes absent from ``true_labels``; the
    macro AUC is ``None`` unless every class is present.
    """
    probs = np.asarray(prob_matrix, dtype=np.float64)
    true = np.asarray(true_labels, dtype=np.int64)
    pred = np.argmax(probs, axis=1)
    conf = confusion_matrix(pred, true, classes)
    precisions = class_precisions(pred, true, classes)
    per_class = []
    for c in range(classes):
        positives = true == c
        if positives.any() and not positives.all():
            per_class.append(ClassMetrics(precisions[c], auc(probs[:, c], positives),
                                          roc_curve(probs[:, c], positives)))
        else:
            per_class.append(ClassMetrics(precisions[c], None, []))
    aucs = [cm.auc for cm in per_class]
    return EvalReport(
        accuracy=accuracy(pred, true),
        precision_macro=float(np.mean(precisions)),
        auc_macro=None if any(a is None for a in aucs) else float(np.mean(aucs)),
        per_class=per_class,
        confusion=conf.tolist(),
        n=int(true.size),
    )

