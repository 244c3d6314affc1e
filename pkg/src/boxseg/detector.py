"""Detector graph invocation and post-processing into confident boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import BBox
from .errors import ConfigError, ModelContractError
from .preprocess import LetterboxTransform

DEFAULT_CONF_THRESH = 0.25
DEFAULT_NMS_IOU = 0.45


@dataclass(frozen=True)
class Detection:
    box: BBox  # original-image coordinates
    score: float
    class_id: int = 0


def check_raw_output(raw: np.ndarray, num_classes: int, num_anchors: int | None) -> None:
    """Validate a raw detector tensor against its metadata-declared layout."""
    if raw.ndim != 3 or raw.shape[0] != 1:
        raise ModelContractError(f"detector output must be 1x(4+C)xN, got shape {tuple(raw.shape)}")
    if raw.shape[1] != 4 + num_classes:
        raise ModelContractError(
            f"model contract violation: expected {4 + num_classes} rows, got {raw.shape[1]}"
        )
    if num_anchors is not None and raw.shape[2] != num_anchors:
        raise ModelContractError(
            f"model contract violation: expected N={num_anchors} columns, got {raw.shape[2]}"
        )


def run_detector(backend, image: np.ndarray) -> np.ndarray:
    """Run a detector backend on a preprocessed input tensor.

    Returns the raw 1x(4+C)xN tensor after checking the metadata contract.
    """
    raw = backend.run(image)
    meta = backend.metadata
    check_raw_output(np.asarray(raw), meta.num_classes, meta.num_anchors)
    return np.asarray(raw, dtype=np.float32)


def decode_detections(
    raw: np.ndarray,
    t: LetterboxTransform,
    conf_thresh: float,
) -> list[Detection]:
    """Decode a raw 1x(4+C)xN tensor into detections in original-image coordinates.

    Per column: score = max class score, class_id = argmax (ties -> lowest index);
    kept iff score >= conf_thresh. Centers/sizes are converted to corners in
    letterbox space, mapped back through `t`, clipped to the image, and dropped
    when degenerate (width or height < 1 px).
    """
    if not 0.0 <= conf_thresh <= 1.0:
        raise ConfigError(f"conf_thresh must be in [0, 1], got {conf_thresh}")
    raw = np.asarray(raw)
    if raw.ndim != 3 or raw.shape[0] != 1 or raw.shape[1] < 5:
        raise ModelContractError(f"detector output must be 1x(4+C)xN, got shape {tuple(raw.shape)}")
    boxes = raw[0, :4, :]  # rows: cx, cy, w, h in letterboxed pixels
    scores = raw[0, 4:, :]
    best_score = scores.max(axis=0)
    best_class = scores.argmax(axis=0)
    detections: list[Detection] = []
    for col in range(raw.shape[2]):
        score = float(best_score[col])
        if score < conf_thresh:
            continue
        cx, cy, w, h = (float(v) for v in boxes[:, col])
        x0, y0 = t.invert_point(cx - w / 2, cy - h / 2)
        x1, y1 = t.invert_point(cx + w / 2, cy + h / 2)
        box = BBox(x0, y0, x1, y1).clipped(t.src_w, t.src_h)
        if box.width < 1 or box.height < 1:
            continue
        detections.append(Detection(box=box, score=score, class_id=int(best_class[col])))
    return detections


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two half-open boxes; 0 when disjoint."""
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union


def nms(dets: list[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy class-agnostic non-maximum suppression.

    Detections are visited by descending score (ties -> earlier input order);
    one is kept iff its IoU with every already-kept box is < iou_thresh.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ConfigError(f"nms iou_thresh must be in (0, 1], got {iou_thresh}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    for i in order:
        cand = dets[i]
        if all(iou(cand.box, k.box) < iou_thresh for k in kept):
            kept.append(cand)
    return kept
