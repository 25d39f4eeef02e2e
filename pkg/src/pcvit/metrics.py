"""Classification metrics: argmax labels, confusion matrix, macro P/R, one-vs-rest ROC/AUC."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from pcvit.errors import ContractError, DegenerateClassError

logger = logging.getLogger(__name__)


def _array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x))


def predict_labels(probs) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    p = _array(probs)
    if p.ndim != 2:
        raise ContractError(f"expected [B, C] scores, got shape {p.shape}")
    return np.argmax(p, axis=1)


def confusion_matrix(true, pred, num_classes: int = 4) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    t = np.asarray(true, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ContractError(f"label arrays must be 1-D and equal length, got {t.shape} and {p.shape}")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ContractError(f"{name} labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def per_class_precision_recall(confusion):
    """Per-class precision and recall plus the classes flagged for zero support.

    A class whose column (row) sums to zero gets precision (recall) 0.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    diag = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    return precision, recall, np.flatnonzero(col == 0).tolist(), np.flatnonzero(row == 0).tolist()


def accuracy_macro_pr(confusion) -> tuple[float, float, float]:
    """``(accuracy, macro precision, macro recall)`` from a confusion matrix."""
    cm = np.asarray(confusion, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ContractError("confusion matrix is empty")
    precision, recall, no_pred, no_true = per_class_precision_recall(cm)
    if no_pred:
        logger.warning("classes %s were never predicted; precision counted as 0", no_pred)
    if no_true:
        logger.warning("classes %s have no true samples; recall counted as 0", no_true)
    return float(np.trace(cm)) / total, float(precision.mean()), float(recall.mean())


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] is +inf for the (0, 0) point

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _binary(scores, positive):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.asarray(positive, dtype=bool).reshape(-1)
    if s.shape != pos.shape:
        raise ContractError(f"{s.size} scores but {pos.size} labels")
    return s, pos


def roc_curve(scores, positive, cls=None) -> RocCurve:
    """ROC points for a binary problem, one per distinct score (descending).

    Samples sharing a score enter at the same threshold, so ties produce a
    single diagonal step.
    """
    s, pos = _binary(scores, positive)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError(cls if cls is not None else "binary")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp = np.cumsum(pos[order])
    fp = np.cumsum(~pos[order])
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    thresholds = np.r_[np.inf, s_sorted[last]]
    return RocCurve(fpr, tpr, thresholds)


def roc_curve_ovr(scores, labels, cls: int) -> RocCurve:
    """One-vs-rest ROC for class ``cls``: positives are samples labelled ``cls``."""
    return roc_curve(scores, np.asarray(labels) == cls, cls)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under an ROC curve."""
    x, y = curve.fpr, curve.tpr
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def auc_rank(scores, positive) -> float:
    """Probability a random positive outscores a random negative, ties counting half."""
    s, pos = _binary(scores, positive)
    p, n = s[pos], np.sort(s[~pos])
    if p.size == 0 or n.size == 0:
        raise DegenerateClassError("binary")
    below = np.searchsorted(n, p, side="left")
    upto = np.searchsorted(n, p, side="right")
    twice_wins = int((2 * below + (upto - below)).sum())
    return twice_wins / (2 * p.size * n.size)


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    per_class_auc: list  # float, or None where the class is degenerate
    macro_auc: float | None
    confusion: list
    roc_curves: list = field(repr=False)  # per class: list of (fpr, tpr)
    roc_thresholds: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("roc_thresholds")
        d["roc_curves"] = [[list(pt) for pt in curve] for curve in self.roc_curves]
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def write_roc_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "threshold", "fpr", "tpr"])
            for c, (curve, thr) in enumerate(zip(self.roc_curves, self.roc_thresholds)):
                for (fpr, tpr), t in zip(curve, thr):
                    w.writerow([c, repr(float(t)), repr(float(fpr)), repr(float(tpr))])

    def write_confusion_csv(self, path, class_names=None) -> None:
        names = class_names or [str(i) for i in range(len(self.confusion))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred", *names])
            for name, row in zip(names, self.confusion):
                w.writerow([name, *row])

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            accuracy=d["accuracy"],
            macro_precision=d["macro_precision"],
            macro_recall=d["macro_recall"],
            per_class_auc=d["per_class_auc"],
            macro_auc=d["macro_auc"],
            confusion=d["confusion"],
            roc_curves=[[tuple(p) for p in c] for c in d["roc_curves"]],
        )


def full_report(probs, labels, num_classes: int | None = None) -> MetricsReport:
    """Every evaluation metric for softmax outputs ``probs[N, C]``."""
    p = _array(probs).astype(np.float64)
    y = np.asarray(labels, dtype=np.int64)
    num_classes = num_classes or p.shape[1]
    if p.ndim != 2 or p.shape != (len(y), num_classes):
        raise ContractError(f"probabilities {p.shape} do not match {len(y)} labels x {num_classes} classes")
    cm = confusion_matrix(y, predict_labels(p), num_classes)
    acc, mp, mr = accuracy_macro_pr(cm)
    aucs, curves, thresholds = [], [], []
    for c in range(num_classes):
        try:
            curve = roc_curve_ovr(p[:, c], y, c)
        except DegenerateClassError:
            logger.warning("class %d: one-vs-rest AUC undefined (no positives or no negatives)", c)
            aucs.append(None)
            curves.append([])
            thresholds.append([])
            continue
        aucs.append(auc(curve))
        curves.append(curve.points())
        thresholds.append(curve.thresholds.tolist())
    defined = [a for a in aucs if a is not None]
    macro_auc = float(np.mean(defined)) if defined else None
    return MetricsReport(acc, mp, mr, aucs, macro_auc, cm.tolist(), curves, thresholds)
