"""Ranking metrics and the model comparison report.

AUC is computed from midranks, which handles tied scores exactly: a tie
between a positive and a negative counts one half. Equivalently it is the
probability that a random positive outranks a random negative.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import as_float_array, check_binary_labels, check_same_length

__all__ = ["SingleClassError", "RocResult", "ScoredSet", "roc_auc", "comparison_report"]


class SingleClassError(ValueError):
    """AUC is undefined when only one class is present."""


@dataclass
class RocResult:
    """AUC plus the ROC staircase.

    ``fpr``/``tpr`` trace the curve from (0, 0) to (1, 1) with one point per
    distinct score threshold; ``thresholds[i]`` is the score cutoff at which
    point ``i`` is reached (``inf`` for the origin, predictions are positive
    when ``score >= threshold``).
    """

    auc: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    n_pos: int
    n_neg: int


@dataclass
class ScoredSet:
    """Scores and ground truth for one model on one split."""

    scores: np.ndarray
    labels: np.ndarray
    ride_hash: np.ndarray | None = None
    bucket_index: np.ndarray | None = None

    def __post_init__(self):
        self.scores = as_float_array(self.scores, "scores").ravel()
        self.labels = check_binary_labels(self.labels)
        check_same_length("scores", self.scores, "labels", self.labels)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    # Tie group boundaries in the sorted array.
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [len(values)]))
    for a, b in zip(starts, stops):
        ranks[order[a:b]] = 0.5 * (a + 1 + b)
    return ranks


def roc_auc(scores, labels) -> RocResult:
    """Midrank AUC and the ROC staircase of a scored sample.

    Scores must be finite; labels must contain both classes. Tied scores
    contribute half weight, so the result is invariant under any strictly
    increasing transform of the scores.
    """
    scores = as_float_array(scores, "scores").ravel()
    labels = check_binary_labels(labels)
    check_same_length("scores", scores, "labels", labels)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError(
            f"need both classes for AUC, got {n_pos} positives / {n_neg} negatives"
        )
    ranks = _midranks(scores)
    auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    # Staircase: sweep thresholds from high to low, one point per distinct
    # score.
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order].astype(np.int64)
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    last_of_group = np.concatenate((np.flatnonzero(np.diff(sorted_scores) != 0),
                                    [len(scores) - 1]))
    fpr = np.concatenate(([0.0], fp[last_of_group] / n_neg))
    tpr = np.concatenate(([0.0], tp[last_of_group] / n_pos))
    thresholds = np.concatenate(([np.inf], sorted_scores[last_of_group]))
    return RocResult(auc=float(auc), fpr=fpr, tpr=tpr, thresholds=thresholds,
                     n_pos=n_pos, n_neg=n_neg)


def comparison_report(results: dict, out_dir=None) -> list:
    """Evaluate several models on their scored sets and rank them by AUC.

    ``results`` maps model name to :class:`ScoredSet` or a plain
    ``(scores, labels)`` pair. When ``out_dir`` is given, writes
    ``report.csv`` (model, auc, n_pos, n_neg) and one ``roc_<model>.csv``
    polyline per model.
    """
    rows = []
    curves = {}
    for name, scored in results.items():
        if not isinstance(scored, ScoredSet):
            scored = ScoredSet(*scored)
        roc = roc_auc(scored.scores, scored.labels)
        rows.append({"model": name, "auc": roc.auc,
                     "n_pos": roc.n_pos, "n_neg": roc.n_neg})
        curves[name] = roc
    rows.sort(key=lambda r: -r["auc"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["model", "auc", "n_pos", "n_neg"])
            writer.writeheader()
            for row in rows:
                writer.writerow({**row, "auc": repr(row["auc"])})
        for name, roc in curves.items():
            safe = name.replace("/", "_").replace(" ", "_").replace(":", "_")
            with open(out / f"roc_{safe}.csv", "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["fpr", "tpr", "threshold"])
                for i in range(len(roc.fpr)):
                    writer.writerow([repr(float(roc.fpr[i])), repr(float(roc.tpr[i])),
                                     repr(float(roc.thresholds[i]))])
    return rows
