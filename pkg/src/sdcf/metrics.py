"""Classification and financial metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float


@dataclass(frozen=True)
class FinanceReport:
    symbols: list[str]
    true_ar: np.ndarray
    predicted_ar: np.ndarray
    abs_diff: np.ndarray
    mae: float


def confusion(y_true, y_pred, num_classes) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.intp).ravel()
    y_pred = np.asarray(y_pred, dtype=np.intp).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise ValueError(f"{name} has a class outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def class_report(cm: ConfusionMatrix) -> ClassReport:
    """Per-class and support-weighted precision, recall and F1.

    Any ratio with a zero denominator is 0.
    """
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    support = c.sum(axis=1)
    precision = _safe_div(tp, c.sum(axis=0))
    recall = _safe_div(tp, support)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    total = support.sum()
    if total > 0:
        w = support / total
        wp, wr, wf = float(w @ precision), float(w @ recall), float(w @ f1)
        acc = float(tp.sum() / total)
    else:
        wp = wr = wf = acc = 0.0
    return ClassReport(precision, recall, f1, support.astype(np.int64), wp, wr, wf, acc)


def finance_report(per_symbol) -> FinanceReport:
    """``per_symbol`` maps symbol -> (true_ar, predicted_ar); rows keep insertion order."""
    if not per_symbol:
        raise ValueError("no symbols")
    symbols = list(per_symbol)
    true_ar = np.array([per_symbol[s][0] for s in symbols], dtype=np.float64)
    pred_ar = np.array([per_symbol[s][1] for s in symbols], dtype=np.float64)
    diff = np.abs(true_ar - pred_ar)
    return FinanceReport(symbols, true_ar, pred_ar, diff, float(diff.mean()))


# --------------------------------------------------------------------------
# CSV output

CLASS_NAMES = ("BUY", "HOLD", "SELL")


def _f(x):
    return f"{x:.6f}"


def classification_header(class_names=CLASS_NAMES):
    cols = ["symbol", "method"]
    for name in class_names:
        cols += [f"{name.lower()}_precision", f"{name.lower()}_recall", f"{name.lower()}_f1"]
    return cols + ["weighted_precision", "weighted_recall", "weighted_f1", "accuracy", "support"]


def classification_row(symbol, method, rep: ClassReport):
    row = [symbol, method]
    for p, r, f in zip(rep.precision, rep.recall, rep.f1):
        row += [_f(p), _f(r), _f(f)]
    return row + [
        _f(rep.weighted_precision),
        _f(rep.weighted_recall),
        _f(rep.weighted_f1),
        _f(rep.accuracy),
        int(rep.support.sum()),
    ]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
