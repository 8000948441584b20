"""Accuracy, F1, ROC/AUC and group-fairness metrics over prediction sets.

Group metrics defined for a pair of groups (equalized odds, ABROCA) are
reduced over more than two groups by taking the worst pair.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientGroupData, SingleClass

ABROCA_GRID = 1001


@dataclass
class PredictionSet:
    scores: np.ndarray  # (N, n_classes) probabilities
    labels: np.ndarray
    attrs: np.ndarray  # (N, K); negative = unknown group
    attr_names: tuple = ()
    predicted: np.ndarray = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attrs = np.asarray(self.attrs, dtype=np.int64)
        if self.attrs.ndim == 1:
            self.attrs = self.attrs[:, None]
        if self.predicted is None:
            self.predicted = self.scores.argmax(axis=1)
        self.predicted = np.asarray(self.predicted, dtype=np.int64)
        n = self.scores.shape[0]
        if self.labels.shape != (n,) or self.predicted.shape != (n,) or self.attrs.shape[0] != n:
            raise ValueError("prediction set arrays differ in length")
        if n and np.max(np.abs(self.scores.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("score rows must sum to 1")
        self.attr_names = tuple(self.attr_names) or tuple(f"attr{k}" for k in range(self.attrs.shape[1]))

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]

    def attr_index(self, attribute) -> int:
        if isinstance(attribute, str):
            return self.attr_names.index(attribute)
        return int(attribute)

    def groups(self, attribute) -> list[int]:
        col = self.attrs[:, self.attr_index(attribute)]
        return sorted(int(g) for g in np.unique(col[col >= 0]))


def predictions_from_model(model, batch, batch_size: int = 256) -> PredictionSet:
    scores = model.predict_proba(batch.images, batch_size)
    return PredictionSet(scores, batch.labels, batch.attrs, batch.attr_names)


def accuracy(preds: PredictionSet) -> float:
    if preds.labels.size == 0:
        return float("nan")
    return float(np.mean(preds.predicted == preds.labels))


def confusion_matrix(labels, predicted, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(predicted)), 1)
    return cm


def f1_macro(labels, predicted, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over classes that occur in labels or predictions."""
    cm = confusion_matrix(labels, predicted, n_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    if not present.any():
        return float("nan")
    f1 = 2 * tp[present] / (2 * tp[present] + fp[present] + fn[present])
    return float(f1.mean())


def roc_curve(scores, labels):
    """ROC points from a sweep over the distinct scores, highest first.

    Tied scores move the curve in a single step. Returns ``(fpr, tpr,
    thresholds)`` starting at (0, 0) and ending at (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both positive and negative labels")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    # last index of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    return fpr, tpr, thresholds


def roc_auc(scores, labels):
    """``((fpr, tpr, thresholds), auc)`` with the trapezoidal area under the curve."""
    fpr, tpr, thr = roc_curve(scores, labels)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return (fpr, tpr, thr), auc


def auc_pair_count(scores, labels) -> float:
    """AUC as the share of positive/negative pairs ranked correctly, ties counting half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos = scores[labels]
    neg = scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def macro_ovr_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mean one-vs-rest AUC over classes that have both positives and negatives."""
    aucs = []
    for c in range(scores.shape[1]):
        y = labels == c
        if y.all() or not y.any():
            continue
        aucs.append(roc_auc(scores[:, c], y)[1])
    if not aucs:
        raise SingleClass("no class has both positive and negative examples")
    return float(np.mean(aucs))


def _binary_rates(preds: PredictionSet, attribute, positive_class: int):
    k = preds.attr_index(attribute)
    col = preds.attrs[:, k]
    groups = preds.groups(k)
    if len(groups) < 2:
        raise InsufficientGroupData(groups[0] if groups else None, "second group")
    y = preds.labels == positive_class
    yhat = preds.predicted == positive_class
    rates = {}
    for g in groups:
        in_g = col == g
        pos = in_g & y
        neg = in_g & ~y
        if not pos.any():
            raise InsufficientGroupData(g, "positive")
        if not neg.any():
            raise InsufficientGroupData(g, "negative")
        rates[g] = (float(yhat[pos].mean()), float(yhat[neg].mean()))
    return rates


def eodds_from_rates(rates: dict) -> float:
    """Worst-pair ``(|dTPR| + |dFPR|) / 2`` over groups given as ``{g: (tpr, fpr)}``."""
    worst = 0.0
    for a, b in itertools.combinations(sorted(rates), 2):
        (ta, fa), (tb, fb) = rates[a], rates[b]
        worst = max(worst, 0.5 * (abs(ta - tb) + abs(fa - fb)))
    return worst


def eodds_difference(preds: PredictionSet, attribute, positive_class: int = 0) -> float:
    """Equalized-odds difference for ``positive_class`` vs rest across the attribute's groups."""
    return eodds_from_rates(_binary_rates(preds, attribute, positive_class))


def _roc_on_grid(fpr, tpr, grid):
    """Evaluate the piecewise-linear ROC curve as a function of FPR.

    At a vertical segment the curve takes its highest TPR (right-continuous);
    between distinct FPR values it runs from the top of one vertical run to
    the bottom of the next.
    """
    ufpr, inv = np.unique(fpr, return_inverse=True)
    top = np.full(ufpr.shape, -np.inf)
    bottom = np.full(ufpr.shape, np.inf)
    np.maximum.at(top, inv, tpr)
    np.minimum.at(bottom, inv, tpr)
    k = np.clip(np.searchsorted(ufpr, grid, side="right") - 1, 0, ufpr.size - 1)
    nxt = np.minimum(k + 1, ufpr.size - 1)
    span = ufpr[nxt] - ufpr[k]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(span > 0, (grid - ufpr[k]) / span, 0.0)
    values = top[k] + t * (bottom[nxt] - top[k])
    return np.where(grid == ufpr[k], top[k], values)


def abroca(preds: PredictionSet, attribute, positive_class: int = 0, grid_size: int = ABROCA_GRID) -> float:
    """Area between per-group ROC curves (worst pair), trapezoid rule on a uniform FPR grid."""
    k = preds.attr_index(attribute)
    col = preds.attrs[:, k]
    groups = preds.groups(k)
    if len(groups) < 2:
        raise InsufficientGroupData(groups[0] if groups else None, "second group")
    grid = np.linspace(0.0, 1.0, grid_size)
    y = preds.labels == positive_class
    curves = {}
    for g in groups:
        in_g = col == g
        if not y[in_g].any():
            raise InsufficientGroupData(g, "positive")
        if y[in_g].all():
            raise InsufficientGroupData(g, "negative")
        fpr, tpr, _ = roc_curve(preds.scores[in_g, positive_class], y[in_g])
        curves[g] = _roc_on_grid(fpr, tpr, grid)
    worst = 0.0
    for a, b in itertools.combinations(groups, 2):
        diff = np.abs(curves[a] - curves[b])
        worst = max(worst, float(np.sum(np.diff(grid) * (diff[1:] + diff[:-1]) / 2.0)))
    return worst


def disparate_impact(preds: PredictionSet, attribute, positive_class: int = 0) -> float:
    """Lowest over highest per-group rate of predicting ``positive_class``.

    When no group ever receives a positive prediction the rates are all equal
    and 1 is returned.
    """
    k = preds.attr_index(attribute)
    col = preds.attrs[:, k]
    groups = preds.groups(k)
    if len(groups) < 2:
        raise InsufficientGroupData(groups[0] if groups else None, "second group")
    yhat = preds.predicted == positive_class
    rates = [float(yhat[col == g].mean()) for g in groups]
    hi = max(rates)
    if hi == 0.0:
        return 1.0
    return min(rates) / hi


@dataclass
class MetricConfig:
    positive_class: int = 0
    di_attribute: int = 0
    class_names: tuple = ()


@dataclass
class FairnessReport:
    accuracy: float
    f1_macro: float
    eodds: dict
    di: Optional[float]
    abroca: dict
    per_group_accuracy: dict
    per_group_auc: dict
    errors: dict = field(default_factory=dict)
    positive_class: int = 0
    di_attribute: str = ""
    n_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "positive_class": self.positive_class,
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "eodds": self.eodds,
            "di_attribute": self.di_attribute,
            "di": self.di,
            "abroca": self.abroca,
            "per_group_accuracy": self.per_group_accuracy,
            "per_group_auc": self.per_group_auc,
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, allow_nan=False) + "\n"

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    def write_group_csv(self, path) -> Path:
        """One row per (attribute, group) with accuracy and macro AUC."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["attribute", "group", "accuracy", "auc"])
            for attr, table in self.per_group_accuracy.items():
                for g, acc in table.items():
                    auc = self.per_group_auc.get(attr, {}).get(g)
                    w.writerow([attr, g, "" if acc is None else repr(acc), "" if auc is None else repr(auc)])
        return path


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _reason(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def fairness_report(preds: PredictionSet, config: MetricConfig | None = None) -> FairnessReport:
    """Collect every metric; a metric that cannot be computed becomes null with a reason."""
    config = config or MetricConfig()
    pos = config.positive_class
    errors = {}
    eodds, abroca_vals, group_acc, group_auc = {}, {}, {}, {}
    for k, name in enumerate(preds.attr_names):
        try:
            eodds[name] = eodds_difference(preds, k, pos)
        except (InsufficientGroupData, SingleClass) as exc:
            eodds[name] = None
            errors[f"eodds.{name}"] = _reason(exc)
        try:
            abroca_vals[name] = abroca(preds, k, pos)
        except (InsufficientGroupData, SingleClass) as exc:
            abroca_vals[name] = None
            errors[f"abroca.{name}"] = _reason(exc)
        col = preds.attrs[:, k]
        group_acc[name] = {}
        group_auc[name] = {}
        for g in preds.groups(k):
            in_g = col == g
            group_acc[name][str(g)] = float(np.mean(preds.predicted[in_g] == preds.labels[in_g]))
            try:
                group_auc[name][str(g)] = macro_ovr_auc(preds.scores[in_g], preds.labels[in_g])
            except SingleClass as exc:
                group_auc[name][str(g)] = None
                errors[f"auc.{name}.{g}"] = _reason(exc)
    di_name = preds.attr_names[config.di_attribute] if preds.attr_names else str(config.di_attribute)
    try:
        di = disparate_impact(preds, config.di_attribute, pos)
    except (InsufficientGroupData, IndexError) as exc:
        di = None
        errors["di"] = _reason(exc)
    return FairnessReport(
        accuracy=accuracy(preds),
        f1_macro=f1_macro(preds.labels, preds.predicted, preds.n_classes),
        eodds=eodds,
        di=di,
        abroca=abroca_vals,
        per_group_accuracy=group_acc,
        per_group_auc=group_auc,
        errors=errors,
        positive_class=pos,
        di_attribute=di_name,
        n_samples=int(preds.labels.size),
    )
