"""Threshold-free detection metrics: ROC, AUC, EER, and two-class balanced accuracy."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

CLASS_NAMES = ("continuing_speech", "backchannel", "turn_taking")
CS, BC, TT = 0, 1, 2


@dataclass(frozen=True)
class ScoreRecord:
    sample_id: str
    true_label: int
    scores: tuple[float, float, float]

    def __post_init__(self):
        if len(self.scores) != 3 or not all(math.isfinite(x) for x in self.scores):
            raise ValueError(f"{self.sample_id}: need exactly 3 finite scores, got {self.scores}")
        if self.true_label not in (0, 1, 2):
            raise ValueError(f"{self.sample_id}: label {self.true_label} outside 0..2")


def _split(pos, neg) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative score")
    return pos, neg


def roc_points(pos_scores, neg_scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) for the rule `score >= threshold`.

    Thresholds run from +inf (the (0, 0) point) down through every distinct
    score; the lowest distinct score already gives (1, 1).
    """
    pos, neg = _split(pos_scores, neg_scores)
    thresholds = np.concatenate([[np.inf], np.unique(np.concatenate([pos, neg]))[::-1]])
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    # count of scores >= t
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    return fp / neg.size, tp / pos.size, thresholds


def auc(pos_scores, neg_scores) -> float:
    fpr, tpr, _ = roc_points(pos_scores, neg_scores)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def eer_point(pos_scores, neg_scores) -> tuple[float, float, float]:
    """(eer, fpr, fnr) at the linearly interpolated FPR = FNR crossing."""
    fpr, tpr, _ = roc_points(pos_scores, neg_scores)
    fnr = 1.0 - tpr
    diff = fpr - fnr  # -1 at the first point, +1 at the last
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0:
        return float(fpr[i]), float(fpr[i]), float(fnr[i])
    f0, f1, n0, n1 = fpr[i - 1], fpr[i], fnr[i - 1], fnr[i]
    alpha = (n0 - f0) / ((f1 - f0) - (n1 - n0))
    x_fpr = f0 + alpha * (f1 - f0)
    x_fnr = n0 + alpha * (n1 - n0)
    return float((x_fpr + x_fnr) / 2), float(x_fpr), float(x_fnr)


def eer(pos_scores, neg_scores) -> float:
    return eer_point(pos_scores, neg_scores)[0]


def balanced_accuracy_two_class(records: Sequence[ScoreRecord]) -> float:
    """Turn-shift vs. continuing speech; backchannel samples are ignored.

    A record is predicted as a turn shift iff score_turn > score_continue.
    """
    hits = {CS: 0, TT: 0}
    totals = {CS: 0, TT: 0}
    for r in records:
        if r.true_label not in totals:
            continue
        pred = TT if r.scores[TT] > r.scores[CS] else CS
        totals[r.true_label] += 1
        hits[r.true_label] += pred == r.true_label
    if not totals[CS] or not totals[TT]:
        raise ValueError("balanced accuracy needs both turn-taking and continuing-speech samples")
    return 0.5 * (hits[TT] / totals[TT] + hits[CS] / totals[CS])


@dataclass
class ClassMetrics:
    auc: float
    eer: float
    n_pos: int
    n_neg: int


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics | None]
    average_auc: float
    average_eer: float
    bacc: float | None = None
    counts: dict[str, int] = field(default_factory=dict)
    model: dict | None = None

    def to_json(self) -> dict:
        out: dict = {}
        for name in CLASS_NAMES:
            m = self.per_class.get(name)
            out[name] = None if m is None else {"auc": m.auc, "eer": m.eer, "n_pos": m.n_pos, "n_neg": m.n_neg}
        out["average"] = {"auc": self.average_auc, "eer": self.average_eer}
        if self.bacc is not None:
            out["bacc"] = self.bacc
        out["counts"] = self.counts
        if self.model is not None:
            out["model"] = self.model
        return out


def report(records: Sequence[ScoreRecord]) -> MetricsReport:
    """One-vs-rest AUC/EER per class on scores[c], plus unweighted averages.

    Classes without positives (or negatives) are left out of the averages.
    """
    if not records:
        raise ValueError("no score records")
    labels = np.array([r.true_label for r in records])
    scores = np.array([r.scores for r in records], dtype=np.float64)
    per_class: dict[str, ClassMetrics | None] = {}
    for c, name in enumerate(CLASS_NAMES):
        is_pos = labels == c
        n_pos, n_neg = int(is_pos.sum()), int((~is_pos).sum())
        if n_pos == 0 or n_neg == 0:
            log.warning("class %s has %d positives and %d negatives; excluded from averages", name, n_pos, n_neg)
            per_class[name] = None
            continue
        pos, neg = scores[is_pos, c], scores[~is_pos, c]
        per_class[name] = ClassMetrics(auc(pos, neg), eer(pos, neg), n_pos, n_neg)
    present = [m for m in per_class.values() if m is not None]
    if not present:
        raise ValueError("no class has both positives and negatives")
    try:
        bacc = balanced_accuracy_two_class(records)
    except ValueError:
        bacc = None
    return MetricsReport(
        per_class=per_class,
        average_auc=float(np.mean([m.auc for m in present])),
        average_eer=float(np.mean([m.eer for m in present])),
        bacc=bacc,
        counts={name: int((labels == c).sum()) for c, name in enumerate(CLASS_NAMES)},
    )


def export_roc(records: Sequence[ScoreRecord], path: str | Path) -> None:
    """CSV rows (class, threshold, fpr, tpr) for every class with both sides present."""
    labels = np.array([r.true_label for r in records])
    scores = np.array([r.scores for r in records], dtype=np.float64)
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class", "threshold", "fpr", "tpr"])
        for c, name in enumerate(CLASS_NAMES):
            is_pos = labels == c
            if is_pos.all() or not is_pos.any():
                continue
            fpr, tpr, thr = roc_points(scores[is_pos, c], scores[~is_pos, c])
            for t, x, y in zip(thr, fpr, tpr):
                w.writerow([name, repr(float(t)), repr(float(x)), repr(float(y))])


def export_histograms(records: Sequence[ScoreRecord], path: str | Path, bins: int = 20) -> None:
    """Per-class score histograms on [0, 1], split into positive and negative samples."""
    labels = np.array([r.true_label for r in records])
    scores = np.array([r.scores for r in records], dtype=np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class", "bin_lo", "bin_hi", "n_pos", "n_neg"])
        for c, name in enumerate(CLASS_NAMES):
            is_pos = labels == c
            hp, _ = np.histogram(scores[is_pos, c], bins=edges)
            hn, _ = np.histogram(scores[~is_pos, c], bins=edges)
            for lo, hi, a, b in zip(edges[:-1], edges[1:], hp, hn):
                w.writerow([name, repr(float(lo)), repr(float(hi)), int(a), int(b)])
