"""Pixel-level confusion counting, the four segmentation metrics, and the
mean/median/std + box-plot statistics used by the reports.

Degenerate-case conventions (documented and tested):
  both masks empty         -> dice = precision = recall = f1 = 1.0
  pred empty, gt nonempty  -> all 0.0
  gt empty, pred nonempty  -> all 0.0
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, binarize_mask, load_mask, read_mask_image
from .errors import DataError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("dice", "precision", "recall", "f1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsQuad:
    dice: float
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict[str, float]:
        return {"dice": self.dice, "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    median: float
    std: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]
    n: int


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    """Per-pixel confusion tally between two boolean masks of equal shape."""
    if pred.shape != gt.shape:
        raise DataError(f"mask dimension mismatch: pred {pred.shape} vs gt {gt.shape}")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def quad_from_counts(c: ConfusionCounts) -> MetricsQuad:
    pred_empty = c.tp + c.fp == 0
    gt_empty = c.tp + c.fn == 0
    if pred_empty and gt_empty:
        return MetricsQuad(1.0, 1.0, 1.0, 1.0)
    if pred_empty or gt_empty:
        return MetricsQuad(0.0, 0.0, 0.0, 0.0)
    dice = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn)
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    return MetricsQuad(dice=dice, precision=precision, recall=recall, f1=dice)


def compute_quad(pred: np.ndarray, gt: np.ndarray) -> MetricsQuad:
    """Dice, precision, recall and F1 between a predicted and ground-truth mask.

    F1 equals Dice by algebraic identity in the binary single-class case.
    """
    return quad_from_counts(confusion_counts(pred, gt))


def summarize(values) -> SummaryStats:
    """Mean/median/sample-std plus Tukey box-plot statistics.

    Quartiles use linear interpolation at positions (n-1)*p; whiskers reach the
    most extreme data points within [q1 - 1.5*IQR, q3 + 1.5*IQR], clamped to the
    box (whiskers never retreat inside the IQR when every point past a quartile
    is an outlier); data beyond the fences are outliers.
    """
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise DataError("summarize requires at least one value")
    mean = float(arr.mean())
    median = float(np.median(arr))
    std = 0.0 if arr.size == 1 else float(arr.std(ddof=1))
    q1, q3 = (float(q) for q in np.percentile(arr, [25.0, 75.0]))
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    whisker_lo = min(float(inside.min()), q1)
    whisker_hi = max(float(inside.max()), q3)
    outliers = tuple(float(v) for v in np.sort(arr[(arr < lo_fence) | (arr > hi_fence)]))
    return SummaryStats(
        mean=mean,
        median=median,
        std=std,
        q1=q1,
        q3=q3,
        whisker_lo=whisker_lo,
        whisker_hi=whisker_hi,
        outliers=outliers,
        n=int(arr.size),
    )


def score_mask_dir(
    manifest: DatasetManifest,
    pred_dir: str | Path,
) -> list[tuple[str, MetricsQuad]]:
    """Score stem-matched external prediction masks against the manifest's ground truth.

    A missing or unusable prediction file scores as an empty mask (warned, not
    fatal). Returns one (sample_id, quad) per manifest entry, in manifest order.
    """
    pred_dir = Path(pred_dir)
    if not pred_dir.is_dir():
        raise DataError(f"prediction directory not found: {pred_dir}")
    by_stem: dict[str, Path] = {}
    for p in sorted(pred_dir.iterdir()):
        if p.is_file() and p.stem not in by_stem:
            by_stem[p.stem] = p
    results: list[tuple[str, MetricsQuad]] = []
    for entry in manifest.entries:
        gt = load_mask(entry.mask_path)
        pred_path = by_stem.get(entry.sample_id)
        pred = np.zeros_like(gt)
        if pred_path is None:
            logger.warning("no prediction mask for sample %s; scoring as empty", entry.sample_id)
        else:
            try:
                candidate = binarize_mask(read_mask_image(pred_path))
            except DataError as exc:
                logger.warning("unreadable prediction for %s (%s); scoring as empty", entry.sample_id, exc)
            else:
                if candidate.shape != gt.shape:
                    logger.warning(
                        "prediction for %s has shape %s vs gt %s; scoring as empty",
                        entry.sample_id,
                        candidate.shape,
                        gt.shape,
                    )
                else:
                    pred = candidate
        results.append((entry.sample_id, compute_quad(pred, gt)))
    return results
