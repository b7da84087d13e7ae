"""Segmentation evaluation: dice, IoU, precision, recall.

Metrics are computed per image from the thresholded prediction's confusion
counts and aggregated as unweighted means over images.  When a metric's
denominator is zero, the value is 1.0 if both masks are empty (a correctly
empty prediction) and 0.0 otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import Tensor
from .exceptions import ShapeError

METRIC_NAMES = ("dice", "iou", "precision", "recall")


@dataclass
class ImageMetrics:
    id: str
    dice: float
    iou: float
    precision: float
    recall: float

    def values(self) -> tuple[float, float, float, float]:
        return (self.dice, self.iou, self.precision, self.recall)


@dataclass
class MetricsReport:
    threshold: float
    per_image: list[ImageMetrics] = field(default_factory=list)

    @property
    def aggregate(self) -> dict[str, float]:
        """Arithmetic mean of each metric over the evaluated images."""
        if not self.per_image:
            raise ValueError("MetricsReport.aggregate: no images evaluated")
        cols = np.array([m.values() for m in self.per_image], dtype=np.float64)
        means = cols.mean(axis=0)
        return dict(zip(METRIC_NAMES, means.tolist()))

    def to_csv(self, path) -> None:
        """One row per image plus an 'aggregate' row; values in % (2 dp)."""
        agg = self.aggregate
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", *METRIC_NAMES])
            for m in self.per_image:
                writer.writerow([m.id, *(f"{100.0 * v:.2f}" for v in m.values())])
            writer.writerow(
                ["aggregate", *(f"{100.0 * agg[k]:.2f}" for k in METRIC_NAMES)])

    def to_text(self) -> str:
        """Human-readable table, values in % with two decimals."""
        agg = self.aggregate
        rows = [(m.id, *(f"{100.0 * v:.2f}" for v in m.values()))
                for m in self.per_image]
        rows.append(("aggregate", *(f"{100.0 * agg[k]:.2f}" for k in METRIC_NAMES)))
        id_width = max(len(r[0]) for r in rows + [("id",)])
        header = f"{'id':<{id_width}}  " + "  ".join(f"{k:>9}" for k in METRIC_NAMES)
        lines = [header, "-" * len(header)]
        for r in rows:
            lines.append(f"{r[0]:<{id_width}}  " + "  ".join(f"{v:>9}" for v in r[1:]))
        return "\n".join(lines)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """Threshold probabilities to a {0, 1} float mask (p > threshold -> 1)."""
    return (_as_array(prob) > threshold).astype(np.float32)


def confusion_counts(pred_bin, target) -> tuple[int, int, int]:
    """(TP, FP, FN) pixel counts for one binary mask pair."""
    p = _as_array(pred_bin) > 0.5
    g = _as_array(target) > 0.5
    if p.shape != g.shape:
        raise ShapeError(
            f"confusion_counts: shapes differ: {p.shape} vs {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return tp, fp, fn


def _ratio(num: int, denom: int, both_empty: bool) -> float:
    if denom == 0:
        return 1.0 if both_empty else 0.0
    return num / denom


def metrics_from_counts(tp: int, fp: int, fn: int) -> dict[str, float]:
    both_empty = (tp + fp + fn) == 0
    return {
        "dice": _ratio(2 * tp, 2 * tp + fp + fn, both_empty),
        "iou": _ratio(tp, tp + fp + fn, both_empty),
        "precision": _ratio(tp, tp + fp, both_empty),
        "recall": _ratio(tp, tp + fn, both_empty),
    }


def evaluate_pair(pred_prob, target, threshold: float = 0.5,
                  pair_id: str = "") -> ImageMetrics:
    """Metrics for a single image (probabilities thresholded first)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    tp, fp, fn = confusion_counts(binarize(pred_prob, threshold), target)
    vals = metrics_from_counts(tp, fp, fn)
    return ImageMetrics(id=pair_id, **vals)


def evaluate_batch(entries: Iterable[tuple[str, np.ndarray, np.ndarray]],
                   threshold: float = 0.5) -> MetricsReport:
    """Build a report from (id, predicted probabilities, target) triples."""
    report = MetricsReport(threshold=threshold)
    for pair_id, pred, target in entries:
        report.per_image.append(
            evaluate_pair(pred, target, threshold=threshold, pair_id=pair_id))
    return report
