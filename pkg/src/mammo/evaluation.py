"""Confusion matrices, accuracy/sensitivity/specificity, ROC and cumulative gain.

Malignant (1) is the positive class throughout.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .dataset import MALIGNANT


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self):
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self):
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    """Fractions in [0, 1]; ``None`` marks a metric whose denominator is zero."""

    accuracy: float | None
    sensitivity: float | None
    specificity: float | None

    @property
    def false_positive_rate(self):
        return None if self.specificity is None else 1.0 - self.specificity

    def to_dict(self):
        return {"accuracy": self.accuracy, "sensitivity": self.sensitivity, "specificity": self.specificity}


def _check_pair(a, b):
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty input")
    return a, b


def confusion(preds, truth) -> ConfusionMatrix:
    p, t = _check_pair(preds, truth)
    p = p == MALIGNANT
    t = t == MALIGNANT
    return ConfusionMatrix(int(np.sum(p & t)), int(np.sum(~p & ~t)), int(np.sum(p & ~t)), int(np.sum(~p & t)))


def metrics(cm: ConfusionMatrix) -> Metrics:
    def ratio(num, den):
        return num / den if den > 0 else None

    return Metrics(ratio(cm.tp + cm.tn, cm.n), ratio(cm.tp, cm.tp + cm.fn), ratio(cm.tn, cm.tn + cm.fp))


@dataclass(frozen=True)
class CurvePoints:
    x: np.ndarray
    y: np.ndarray
    kind: str
    area: float | None = None

    def points(self):
        return list(zip(self.x.tolist(), self.y.tolist()))

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y"])
            for x, y in self.points():
                w.writerow([repr(x), repr(y)])


def _sorted_blocks(scores, truth):
    """Positives and totals per block of tied scores, best score first."""
    s, t = _check_pair(scores, truth)
    s = s.astype(np.float64)
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    pos = (t == MALIGNANT).astype(np.int64)
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    block_pos = np.add.reduceat(pos, starts)
    block_n = np.diff(np.r_[starts, len(s)])
    return block_pos, block_n


def roc_curve(scores, truth) -> CurvePoints:
    """ROC points from a descending sweep over distinct scores; area by trapezoids."""
    block_pos, block_n = _sorted_blocks(scores, truth)
    P = block_pos.sum()
    N = block_n.sum() - P
    if P == 0 or N == 0:
        raise ValueError("ROC needs at least one sample of each class")
    tpr = np.r_[0, np.cumsum(block_pos)] / P
    fpr = np.r_[0, np.cumsum(block_n - block_pos)] / N
    area = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return CurvePoints(fpr, tpr, "roc", area)


def auc(scores, truth) -> float:
    return roc_curve(scores, truth).area


def auc_mann_whitney(scores, truth) -> float:
    """Probability that a random positive outranks a random negative, ties counted half.

    Computed from mid-ranks, so it is an independent route to the ROC area.
    """
    s, t = _check_pair(scores, truth)
    s = s.astype(np.float64)
    pos = t == MALIGNANT
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one sample of each class")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + 1 + b) / 2.0
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def gain_curve(scores, truth) -> CurvePoints:
    """Cumulative gain: fraction of positives captured vs fraction of samples targeted.

    One point per block of tied scores, so a tied block contributes a
    straight segment (its members share the block's average hit rate).
    """
    block_pos, block_n = _sorted_blocks(scores, truth)
    P = block_pos.sum()
    if P == 0:
        raise ValueError("gain chart needs at least one positive")
    x = np.r_[0, np.cumsum(block_n)] / block_n.sum()
    y = np.r_[0, np.cumsum(block_pos)] / P
    return CurvePoints(x, y, "gain")


# ------------------------------------------------------------------ reports

@dataclass
class EvalReport:
    model: str
    partition: str
    confusion: ConfusionMatrix
    metrics: Metrics
    auc: float | None = None
    curves: dict = field(default_factory=dict)

    def to_dict(self):
        return {"model": self.model, "partition": self.partition, "confusion": self.confusion.to_dict(),
                "metrics": self.metrics.to_dict(), "auc": self.auc}

    @classmethod
    def from_dict(cls, d):
        c = d["confusion"]
        m = d["metrics"]
        return cls(d["model"], d["partition"], ConfusionMatrix(c["tp"], c["tn"], c["fp"], c["fn"]),
                   Metrics(m["accuracy"], m["sensitivity"], m["specificity"]), d.get("auc"))

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def evaluate(model: str, partition: str, preds, scores, truth) -> EvalReport:
    cm = confusion(preds, truth)
    truth = np.asarray(truth)
    curves = {}
    area = None
    if len(np.unique(truth)) == 2:
        curves["roc"] = roc_curve(scores, truth)
        curves["gain"] = gain_curve(scores, truth)
        area = curves["roc"].area
    return EvalReport(model, partition, cm, metrics(cm), area, curves)


def pct(v):
    """Percentage with two decimals, halves rounded up (225/288 shows as 78.13%)."""
    if v is None:
        return "   n/a"
    d = (Decimal(v) * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{d:>6}%"


def compare_report(reports) -> dict:
    """Side-by-side summary of per-model reports.

    Returns a dict with ``rows`` (one per report), ``auc_ranking`` (test
    partition, best first) and ``text`` (aligned tables mirroring the
    confusion / measures / AUC layout).
    """
    reports = list(reports)
    if not reports:
        raise ValueError("need at least one report")
    rows = [r.to_dict() for r in reports]
    test = [r for r in reports if r.partition == "test" and r.auc is not None]
    if not test:
        test = [r for r in reports if r.auc is not None]
    ranking = [r.model for r in sorted(test, key=lambda r: -r.auc)]

    lines = ["Confusion matrices (rows: desired, columns: predicted benign / malignant)"]
    lines.append(f"{'model':<8} {'partition':<10} {'desired':<10} {'benign':>7} {'malignant':>10}")
    for r in reports:
        c = r.confusion
        lines.append(f"{r.model:<8} {r.partition:<10} {'benign':<10} {c.tn:>7} {c.fp:>10}")
        lines.append(f"{'':<8} {'':<10} {'malignant':<10} {c.fn:>7} {c.tp:>10}")
    lines.append("")
    lines.append(f"{'model':<8} {'partition':<10} {'accuracy':>9} {'sensitivity':>12} {'specificity':>12}")
    for r in reports:
        m = r.metrics
        lines.append(f"{r.model:<8} {r.partition:<10} {pct(m.accuracy):>9} {pct(m.sensitivity):>12} "
                     f"{pct(m.specificity):>12}")
    lines.append("")
    lines.append(f"{'model':<8} {'AUC':>6}")
    for r in test:
        lines.append(f"{r.model:<8} {r.auc:6.3f}")
    return {"rows": rows, "auc_ranking": ranking, "text": "\n".join(lines)}
