"""Box-jitter robustness protocol: expand ground-truth-derived boxes by a fixed
pixel offset on all four corners, re-segment, and track Dice per offset."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import BBox, DatasetManifest, derive_boxes, load_mask, read_image, validate_pair
from .errors import ConfigError, DataError
from .metrics import SummaryStats, compute_quad, summarize
from .segmenter import box_to_prompt, decode_mask, encode_image, union_masks

logger = logging.getLogger(__name__)

DEFAULT_OFFSETS = (0, 5, 10, 15, 20)


@dataclass(frozen=True)
class JitterSpec:
    """Strictly increasing pixel offsets; the first must be 0 (tight-box baseline)."""

    offsets: tuple[int, ...] = DEFAULT_OFFSETS

    def __post_init__(self) -> None:
        if not self.offsets or self.offsets[0] != 0:
            raise ConfigError(f"jitter offsets must start at 0, got {self.offsets}")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ConfigError(f"jitter offsets must be strictly increasing, got {self.offsets}")
        if any(k < 0 for k in self.offsets):
            raise ConfigError(f"jitter offsets must be non-negative, got {self.offsets}")


@dataclass
class JitterResult:
    offsets: tuple[int, ...]
    sample_ids: list[str]
    dice: dict[int, list[float]]  # offset -> per-sample Dice, sample_ids order
    summaries: dict[int, SummaryStats] = field(default_factory=dict)

    def save_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for offset in self.offsets:
                for sample_id, value in zip(self.sample_ids, self.dice[offset]):
                    fh.write(
                        json.dumps({"offset": offset, "sample_id": sample_id, "dice": value}) + "\n"
                    )


def expand_box(box: BBox, k: int, bounds: tuple[int, int]) -> BBox:
    """Grow a box by k pixels on every side, clipped to (width, height) bounds."""
    if k < 0:
        raise ConfigError(f"expansion must be non-negative, got {k}")
    width, height = bounds
    return BBox(box.x0 - k, box.y0 - k, box.x1 + k, box.y1 + k).clipped(width, height)


def jitter_dice_for_sample(
    seg_backend,
    image: np.ndarray,
    gt_mask: np.ndarray,
    spec: JitterSpec,
    min_area: int,
    mask_threshold: float = 0.0,
    sample_id: str | None = None,
    cache: dict | None = None,
) -> dict[int, float]:
    """Dice vs ground truth for each offset, prompting with expanded GT boxes."""
    h, w = gt_mask.shape
    boxes = derive_boxes(gt_mask, min_area=min_area)
    emb = encode_image(seg_backend, image, sample_id=sample_id, cache=cache)
    out: dict[int, float] = {}
    for k in spec.offsets:
        pieces = []
        for box in boxes:
            expanded = expand_box(box, k, (w, h))
            pred = decode_mask(
                seg_backend, emb, box_to_prompt(expanded, emb.transform), (h, w), mask_threshold
            )
            pieces.append(pred.final_mask)
        pred_mask = union_masks(pieces, shape=(h, w))
        out[k] = compute_quad(pred_mask, gt_mask).dice
    return out


def run_jitter_study(
    manifest: DatasetManifest,
    seg_backend,
    spec: JitterSpec,
    min_area: int,
    mask_threshold: float = 0.0,
    partial_dir: str | Path | None = None,
) -> JitterResult:
    """Evaluate every eval-split sample at every offset.

    Backend errors abort the study, but per-offset results gathered so far are
    persisted to `partial_dir` first when one is given.
    """
    entries = manifest.eval_entries
    if not entries:
        raise DataError("empty evaluation split")
    result = JitterResult(
        offsets=spec.offsets,
        sample_ids=[e.sample_id for e in entries],
        dice={k: [] for k in spec.offsets},
    )
    cache: dict = {}
    try:
        for entry in entries:
            image = read_image(entry.image_path)
            gt = load_mask(entry.mask_path)
            validate_pair(image, gt, entry.sample_id)
            if hasattr(seg_backend, "bind_sample"):
                seg_backend.bind_sample(gt)
            per_offset = jitter_dice_for_sample(
                seg_backend,
                image,
                gt,
                spec,
                min_area,
                mask_threshold,
                sample_id=entry.sample_id,
                cache=cache,
            )
            for k, dice in per_offset.items():
                result.dice[k].append(dice)
    except Exception:
        if partial_dir is not None:
            completed = min(len(v) for v in result.dice.values())
            partial = JitterResult(
                offsets=spec.offsets,
                sample_ids=result.sample_ids[:completed],
                dice={k: v[:completed] for k, v in result.dice.items()},
            )
            partial.save_jsonl(Path(partial_dir) / "jitter-partial.jsonl")
            logger.error("jitter study aborted; partial results persisted to %s", partial_dir)
        raise
    result.summaries = {k: summarize(v) for k, v in result.dice.items()}
    return result
