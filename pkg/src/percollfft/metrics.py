"""Classification metrics and mean/std aggregation over repeated runs."""

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import CLASSES
from .errors import ContractError


def confusion_matrix(y_true, y_pred, num_classes=len(CLASSES)):
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def accuracy(confusion):
    cm = np.asarray(confusion)
    return float(np.trace(cm) / cm.sum())


def per_class_f1(confusion):
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def weighted_f1(confusion):
    """Support-weighted mean of per-class F1; zero-support classes carry no weight."""
    cm = np.asarray(confusion, dtype=np.float64)
    support = cm.sum(axis=1)
    total = support.sum()
    if total <= 0:
        raise ContractError("weighted_f1 of an empty confusion matrix")
    return float((per_class_f1(cm) * support).sum() / total)


def _tie_groups(scores, positives):
    """Cumulative (TP, FP) after each distinct score, highest score first."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = positives[order]
    last_of_group = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    return tp.astype(np.float64), fp.astype(np.float64)


def roc_curve(scores, positives):
    """(FPR, TPR) points from (0, 0), one per distinct threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    tp, fp = _tie_groups(scores, positives)
    P, N = positives.sum(), (~positives).sum()
    return np.r_[0.0, fp / N], np.r_[0.0, tp / P]


def binary_auroc(scores, positives):
    """Trapezoidal area under the ROC curve; tied scores count half."""
    positives = np.asarray(positives, dtype=bool)
    if positives.all() or not positives.any():
        raise ContractError("AUROC needs at least one positive and one negative")
    fpr, tpr = roc_curve(scores, positives)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def precision_recall_curve(scores, positives):
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    tp, fp = _tie_groups(scores, positives)
    return tp / (tp + fp), tp / positives.sum()


def binary_auprc(scores, positives):
    """Area under the step-wise PR curve using the precision envelope.

    At each achieved recall the precision is replaced by the best precision
    attainable at that recall or higher.
    """
    positives = np.asarray(positives, dtype=bool)
    if not positives.any():
        raise ContractError("AUPRC needs at least one positive")
    precision, recall = precision_recall_curve(scores, positives)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * envelope))


@dataclass
class CurveSummary:
    per_class: dict
    macro: float
    excluded: list = field(default_factory=list)
    micro: float = None
    weighted: float = None

    def to_json(self):
        out = {"per_class": self.per_class, "macro": self.macro, "excluded": self.excluded}
        if self.micro is not None:
            out["micro"] = self.micro
        if self.weighted is not None:
            out["weighted"] = self.weighted
        return out


def _one_vs_rest(fn, scores, labels, require_negative):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K = scores.shape[1]
    per_class, excluded, support = {}, [], {}
    for c in range(K):
        pos = labels == c
        if not pos.any() or (require_negative and pos.all()):
            excluded.append(CLASSES[c] if K == len(CLASSES) else str(c))
            continue
        name = CLASSES[c] if K == len(CLASSES) else str(c)
        per_class[name] = fn(scores[:, c], pos)
        support[name] = int(pos.sum())
    if not per_class:
        raise ContractError("no class has both positives and negatives")
    vals = list(per_class.values())
    weighted = sum(per_class[k] * support[k] for k in per_class) / sum(support.values())
    return per_class, float(np.mean(vals)), excluded, float(weighted)


def auroc_ovr(scores, labels):
    """One-vs-rest AUROC per class plus macro, micro and support-weighted averages."""
    per_class, macro, excluded, weighted = _one_vs_rest(binary_auroc, scores, labels, True)
    scores = np.asarray(scores, dtype=np.float64)
    onehot = np.eye(scores.shape[1], dtype=bool)[np.asarray(labels)]
    micro = binary_auroc(scores.ravel(), onehot.ravel())
    return CurveSummary(per_class, macro, excluded, micro, weighted)


def auprc(scores, labels):
    per_class, macro, excluded, weighted = _one_vs_rest(binary_auprc, scores, labels, False)
    return CurveSummary(per_class, macro, excluded, None, weighted)


@dataclass
class Metrics:
    accuracy: float
    weighted_f1: float
    auroc: CurveSummary
    auprc: CurveSummary
    confusion: np.ndarray
    n: int

    def scalars(self):
        """Flat name -> value map used for aggregation."""
        out = {"accuracy": self.accuracy, "weighted_f1": self.weighted_f1,
               "auroc": self.auroc.macro, "auprc": self.auprc.macro}
        for k, v in self.auroc.per_class.items():
            out[f"auroc.{k}"] = v
        for k, v in self.auprc.per_class.items():
            out[f"auprc.{k}"] = v
        return out

    def to_json(self):
        return {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "auroc": self.auroc.to_json(),
            "auprc": self.auprc.to_json(),
            "confusion": self.confusion.tolist(),
            "n": self.n,
        }


def compute_metrics(scores, labels, num_classes=len(CLASSES)):
    """All metrics from per-sample class scores (e.g. softmax outputs)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or len(scores) == 0:
        raise ContractError("evaluation set is empty")
    if len(labels) != len(scores):
        raise ContractError(f"{len(labels)} labels for {len(scores)} score rows")
    pred = np.argmax(scores, axis=1)
    cm = confusion_matrix(labels, pred, num_classes)
    return Metrics(accuracy(cm), weighted_f1(cm), auroc_ovr(scores, labels),
                   auprc(scores, labels), cm, len(labels))


def format_mean_std(mean, std, digits=2):
    if std is None:
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f}±{std:.{digits}f}"


_DIGITS = {"accuracy": 2, "weighted_f1": 2}


@dataclass
class RunSummary:
    mean: dict
    std: dict  # None values when only one run
    runs: int
    per_fold: list = field(default_factory=list)
    fingerprint: str = ""

    def formatted(self):
        return {k: format_mean_std(self.mean[k], self.std[k], _DIGITS.get(k, 4)) for k in self.mean}

    def to_json(self):
        return {"runs": self.runs, "mean": self.mean, "std": self.std,
                "formatted": self.formatted(), "per_fold": self.per_fold,
                "fingerprint": self.fingerprint}


def aggregate_runs(runs, per_fold=None, fingerprint=""):
    """Mean and sample (n-1) standard deviation of every scalar metric."""
    if not runs:
        raise ContractError("aggregate_runs needs at least one run")
    dicts = [r.scalars() if isinstance(r, Metrics) else dict(r) for r in runs]
    keys = [k for k in dicts[0] if all(k in d for d in dicts)]
    mean, std = {}, {}
    for k in keys:
        vals = np.array([d[k] for d in dicts], dtype=np.float64)
        mean[k] = float(vals.mean())
        std[k] = float(math.sqrt(((vals - vals.mean()) ** 2).sum() / (len(vals) - 1))) if len(vals) > 1 else None
    return RunSummary(mean, std, len(dicts), per_fold or [], fingerprint)
