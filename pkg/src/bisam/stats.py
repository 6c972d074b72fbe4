"""Rank correlation and classification metrics.

Positive class throughout is label 1 (gait freezing present). Zero-denominator
cells are reported as 0.0 and flagged ``degenerate`` so downstream report
emitters stay total functions.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


class ConstantInputError(ValueError):
    """Correlation is undefined for a constant sequence."""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    fp: int
    tn: int

    def __post_init__(self):
        counts = (self.tp, self.fn, self.fp, self.tn)
        if any(c < 0 for c in counts):
            raise ValueError(f"negative cell count in {counts}")
        if self.total < 1:
            raise ValueError("confusion matrix must count at least one sample")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    precision_pos: float
    recall_pos: float
    f1_pos: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    p_o: float
    p_e: float
    kappa: float
    tp: int
    fn: int
    fp: int
    tn: int
    degenerate: bool
    averaging: str = "binary_positive"

    @property
    def precision(self) -> float:
        return self.precision_macro if self.averaging == "macro" else self.precision_pos

    @property
    def recall(self) -> float:
        return self.recall_macro if self.averaging == "macro" else self.recall_pos

    @property
    def f1(self) -> float:
        return self.f1_macro if self.averaging == "macro" else self.f1_pos

    def to_json_dict(self) -> dict:
        d = asdict(self)
        del d["averaging"]
        del d["p_o"]
        del d["p_e"]
        return d


def average_ranks(x) -> np.ndarray:
    """Ranks 1..n with ties assigned the average of the tied positions."""
    x = np.asarray(x, dtype=float)
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=float)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        # positions i..j (0-based) share the average rank
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    return float((da * db).sum() / denom)


def spearman_rho(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d sequences of equal length")
    if x.size < 3:
        raise ValueError("need at least 3 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ConstantInputError("correlation undefined for constant input")
    rx, ry = average_ranks(x), average_ranks(y)
    # identical / reversed rankings give exactly +/-1 (float round-off in the
    # general formula could land an ulp away)
    if np.array_equal(rx, ry):
        return 1.0
    if np.array_equal(rx, rx.size + 1.0 - ry):
        return -1.0
    return _pearson(rx, ry)


def confusion(labels, preds) -> ConfusionMatrix:
    """Binary confusion matrix with positive class = 1."""
    labels = np.asarray(labels, dtype=int)
    preds = np.asarray(preds, dtype=int)
    if labels.shape != preds.shape or labels.ndim != 1:
        raise ValueError("labels and preds must be 1-d sequences of equal length")
    if labels.size < 1:
        raise ValueError("empty input")
    for name, arr in (("labels", labels), ("preds", preds)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary 0/1")
    return ConfusionMatrix(
        tp=int(np.sum((labels == 1) & (preds == 1))),
        fn=int(np.sum((labels == 1) & (preds == 0))),
        fp=int(np.sum((labels == 0) & (preds == 1))),
        tn=int(np.sum((labels == 0) & (preds == 0))),
    )


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def cohen_kappa(cm: ConfusionMatrix) -> float:
    kappa, _, _, _ = _kappa_parts(cm)
    return kappa


def _kappa_parts(cm: ConfusionMatrix) -> tuple[float, float, float, bool]:
    n = float(cm.total)
    p_o = (cm.tp + cm.tn) / n
    # chance agreement from marginal products
    p_e = (cm.tp + cm.fp) * (cm.tp + cm.fn) / (n * n) + (cm.fn + cm.tn) * (cm.fp + cm.tn) / (n * n)
    if p_e == 1.0:
        # all mass in one cell of both marginals; agreement is trivially
        # perfect or trivially absent
        return (1.0 if p_o == 1.0 else 0.0), p_o, p_e, True
    return (p_o - p_e) / (1.0 - p_e), p_o, p_e, False


def metrics(cm: ConfusionMatrix, averaging: str = "binary_positive") -> MetricReport:
    """Accuracy, precision/recall/F1 (positive-class and macro), and kappa."""
    if averaging not in ("binary_positive", "macro"):
        raise ValueError(f"unknown averaging {averaging!r}")
    n = float(cm.total)
    accuracy = (cm.tp + cm.tn) / n

    prec_pos, d1 = _safe_div(cm.tp, cm.tp + cm.fp)
    rec_pos, d2 = _safe_div(cm.tp, cm.tp + cm.fn)
    f1_pos, d3 = _safe_div(2.0 * prec_pos * rec_pos, prec_pos + rec_pos)
    # negative class treated as "positive" for the macro average
    prec_neg, d4 = _safe_div(cm.tn, cm.tn + cm.fn)
    rec_neg, d5 = _safe_div(cm.tn, cm.tn + cm.fp)
    f1_neg, d6 = _safe_div(2.0 * prec_neg * rec_neg, prec_neg + rec_neg)

    kappa, p_o, p_e, d7 = _kappa_parts(cm)
    return MetricReport(
        accuracy=accuracy,
        precision_pos=prec_pos,
        recall_pos=rec_pos,
        f1_pos=f1_pos,
        precision_macro=0.5 * (prec_pos + prec_neg),
        recall_macro=0.5 * (rec_pos + rec_neg),
        f1_macro=0.5 * (f1_pos + f1_neg),
        p_o=p_o,
        p_e=p_e,
        kappa=kappa,
        tp=cm.tp,
        fn=cm.fn,
        fp=cm.fp,
        tn=cm.tn,
        degenerate=any((d1, d2, d3, d4, d5, d6, d7)),
        averaging=averaging,
    )
