"""Binary classification metrics with COVID as the positive class.

Covers accuracy, precision, recall, F1, support-weighted averages, ROC
curves and AUC. A zero denominator yields 0 plus an
:class:`~hybridct.errors.UndefinedMetricWarning` rather than NaN, so it
cannot poison a weighted average.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import UndefinedMetricError, UndefinedMetricWarning

POSITIVE = "COVID"
NEGATIVE = "NONCOVID"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def flipped(self) -> ConfusionMatrix:
        """The same counts seen with NONCOVID as the positive class."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def as_grid(self) -> np.ndarray:
        """2x2 grid, rows = true (COVID, NONCOVID), cols = predicted."""
        return np.array([[self.tp, self.fn], [self.fp, self.tn]])


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    undefined: tuple[str, ...] = ()


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


def _binary(a, name):
    a = np.asarray(a)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    bad = set(np.unique(a).tolist()) - {0, 1}
    if bad:
        raise ValueError(f"{name} contains non-binary labels {sorted(bad)}")
    return a.astype(np.int64)


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = _binary(y_true, "y_true")
    y_pred = _binary(y_pred, "y_pred")
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {len(y_true)} labels vs {len(y_pred)} predictions")
    return ConfusionMatrix(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
    )


def _ratio(num, den, name):
    if den == 0:
        warnings.warn(f"{name} is undefined (zero denominator); reported as 0", UndefinedMetricWarning,
                      stacklevel=3)
        return 0.0
    return num / den


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("accuracy of an empty confusion matrix is undefined")
    return (cm.tp + cm.tn) / cm.total


def precision(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fp, "precision")


def recall(cm: ConfusionMatrix) -> float:
    return _ratio(cm.tp, cm.tp + cm.fn, "recall")


def f1(cm: ConfusionMatrix) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        p, r = precision(cm), recall(cm)
    return _ratio(2 * p * r, p + r, "f1")


def _class_entry(label, cm: ConfusionMatrix) -> ClassMetrics:
    p, r, f = precision(cm), recall(cm), f1(cm)
    undefined = [name for name, den in (("precision", cm.tp + cm.fp), ("recall", cm.tp + cm.fn),
                                        ("f1", p + r)) if den == 0]
    return ClassMetrics(label, p, r, f, cm.tp + cm.fn, tuple(undefined))


def class_metrics_from_cm(cm: ConfusionMatrix) -> tuple[ClassMetrics, ClassMetrics]:
    return _class_entry(POSITIVE, cm), _class_entry(NEGATIVE, cm.flipped())


def class_metrics(y_true, y_pred) -> tuple[ClassMetrics, ClassMetrics]:
    """Per-class entries (COVID, NONCOVID); each class in turn is the positive one."""
    return class_metrics_from_cm(confusion(y_true, y_pred))


def weighted_average(values, supports) -> float:
    """Support-weighted mean: sum(M_i * n_i) / N."""
    values = np.asarray(values, dtype=np.float64)
    supports = np.asarray(supports, dtype=np.float64)
    if values.shape != supports.shape:
        raise ValueError("values and supports differ in length")
    n = supports.sum()
    if n == 0:
        raise UndefinedMetricError("weighted average over zero samples")
    return float((values * supports).sum() / n)


# --- ROC ---------------------------------------------------------------------------

def _scores_labels(y_true, scores):
    y = _binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("ROC needs both classes in y_true")
    return y, s, n_pos, len(y) - n_pos


def roc_curve(y_true, scores) -> list[RocPoint]:
    """One point per distinct score, highest first, behind a +inf sentinel.

    A sample counts as positive at threshold t when ``score >= t``.
    """
    y, s, n_pos, n_neg = _scores_labels(y_true, scores)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tps = np.cumsum(y_sorted)
    fps = np.cumsum(1 - y_sorted)
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    points = [RocPoint(math.inf, 0.0, 0.0)]
    points += [RocPoint(float(s_sorted[e]), tps[e] / n_pos, fps[e] / n_neg) for e in ends]
    return points


def auc(roc_or_labels, scores=None) -> float:
    """Trapezoidal area under a ROC curve (or under ``roc_curve(labels, scores)``)."""
    roc = roc_curve(roc_or_labels, scores) if scores is not None else list(roc_or_labels)
    if len(roc) < 2:
        raise ValueError("a ROC curve needs at least two points")
    fpr = np.array([p.fpr for p in roc])
    tpr = np.array([p.tpr for p in roc])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def rank_auc(y_true, scores) -> float:
    """P(score_pos > score_neg) + 1/2 P(tie), via midranks."""
    from scipy.stats import rankdata

    y, s, n_pos, n_neg = _scores_labels(y_true, scores)
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# --- report -----------------------------------------------------------------------------

@dataclass
class EvalReport:
    name: str
    confusion: ConfusionMatrix
    per_class: tuple[ClassMetrics, ClassMetrics]
    accuracy: float
    weighted: dict[str, float]
    roc: list[RocPoint] = field(default_factory=list)
    auc: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "accuracy": self.accuracy,
            "confusion": asdict(self.confusion),
            "per_class": [dict(asdict(c), undefined=list(c.undefined)) for c in self.per_class],
            "weighted": dict(self.weighted),
            "roc": [[_enc(p.threshold), p.tpr, p.fpr] for p in self.roc],
            "auc": self.auc,
            "config_hash": self.metadata.get("config_hash"),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls(
            name=d["name"],
            confusion=ConfusionMatrix(**d["confusion"]),
            per_class=tuple(ClassMetrics(**dict(c, undefined=tuple(c["undefined"]))) for c in d["per_class"]),
            accuracy=d["accuracy"],
            weighted=dict(d["weighted"]),
            roc=[RocPoint(_dec(t), tpr, fpr) for t, tpr, fpr in d["roc"]],
            auc=d["auc"],
            metadata=dict(d.get("metadata") or {}),
        )


def _enc(x: float):
    return "inf" if math.isinf(x) else x


def _dec(x):
    return math.inf if x == "inf" else float(x)


def report_from_confusion(cm: ConfusionMatrix, name: str = "model", roc=None, metadata=None) -> EvalReport:
    pos, neg = class_metrics_from_cm(cm)
    supports = (pos.support, neg.support)
    weighted = {
        m: weighted_average([getattr(pos, m), getattr(neg, m)], supports)
        for m in ("precision", "recall", "f1")
    }
    roc = list(roc) if roc is not None else []
    return EvalReport(name, cm, (pos, neg), accuracy(cm), weighted, roc,
                      auc(roc) if roc else None, dict(metadata or {}))


def evaluate(y_true, y_pred, scores=None, name: str = "model", metadata=None) -> EvalReport:
    """Full report; ``scores`` (continuous, higher = COVID) enables ROC/AUC."""
    cm = confusion(y_true, y_pred)
    roc = roc_curve(y_true, scores) if scores is not None else None
    return report_from_confusion(cm, name, roc, metadata)
