"""Promptable segmentation: image encoding (cached), box prompts, mask decoding
and per-image composition of the detect -> prompt -> segment chain."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import cv2
import numpy as np

from .dataset import BBox
from .detector import (
    DEFAULT_CONF_THRESH,
    DEFAULT_NMS_IOU,
    Detection,
    decode_detections,
    nms,
    run_detector,
)
from .errors import DataError, ModelContractError
from .preprocess import LetterboxTransform, letterbox, normalize

logger = logging.getLogger(__name__)

DEFAULT_MASK_THRESHOLD = 0.0

# Point labels of the box-corner prompt pair expected by exported decoders.
BOX_CORNER_LABELS = (2.0, 3.0)


@dataclass(frozen=True)
class ImageEmbedding:
    """Encoder output, reusable across any number of prompts for one image."""

    tensor: np.ndarray  # (1, 256, 64, 64) float32 per metadata
    transform: LetterboxTransform  # original coords -> encoder-input coords
    sample_id: str | None = None

    @property
    def orig_size(self) -> tuple[int, int]:
        """(height, width) of the source image."""
        return (self.transform.src_h, self.transform.src_w)


@dataclass(frozen=True)
class BoxPrompt:
    """A box encoded as a labeled corner-point pair in encoder-input pixels."""

    point_coords: tuple[tuple[float, float], tuple[float, float]]
    point_labels: tuple[float, float] = BOX_CORNER_LABELS

    def coords_array(self) -> np.ndarray:
        return np.asarray([self.point_coords], dtype=np.float32)  # (1, 2, 2)

    def labels_array(self) -> np.ndarray:
        return np.asarray([self.point_labels], dtype=np.float32)  # (1, 2)


@dataclass(frozen=True)
class MaskPrediction:
    low_res_logits: np.ndarray  # (1, K, 256, 256)
    predicted_iou: np.ndarray  # (K,)
    final_mask: np.ndarray  # bool (H, W) at original image size
    chosen_index: int


def prepare_encoder_input(image: np.ndarray, meta) -> tuple[np.ndarray, LetterboxTransform]:
    """Scale longest side to the encoder input size, normalize, zero-pad bottom/right.

    Returns the (1, 3, S, S) float32 tensor and the coordinate transform.
    """
    src_h, src_w = image.shape[:2]
    if src_h == 0 or src_w == 0:
        raise DataError(f"zero-sized image: {image.shape}")
    size = meta.input_size
    t = LetterboxTransform.top_left(src_w, src_h, size)
    new_w, new_h = t.content_size
    resized = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    chw = normalize(resized, meta.normalization)
    padded = np.zeros((3, size, size), dtype=np.float32)
    padded[:, :new_h, :new_w] = chw
    return padded[None, ...], t


def encode_image(
    backend,
    image: np.ndarray,
    sample_id: str | None = None,
    cache: dict | None = None,
) -> ImageEmbedding:
    """Encode an image once; repeated calls for the same sample_id hit the cache."""
    if cache is not None and sample_id is not None and sample_id in cache:
        return cache[sample_id]
    tensor, t = prepare_encoder_input(image, backend.encoder_meta)
    emb = np.asarray(backend.encode(tensor), dtype=np.float32)
    expected = tuple(backend.encoder_meta.embedding_shape)
    if emb.shape != expected:
        raise ModelContractError(f"embedding shape {emb.shape} != declared {expected}")
    result = ImageEmbedding(tensor=emb, transform=t, sample_id=sample_id)
    if cache is not None and sample_id is not None:
        cache[sample_id] = result
    return result


def box_to_prompt(box: BBox, t: LetterboxTransform) -> BoxPrompt:
    """Map a box in original-image coordinates to a labeled corner-point prompt."""
    if not box.is_valid():
        raise DataError(f"invalid box: {box}")
    x0, y0 = t.apply_point(box.x0, box.y0)
    x1, y1 = t.apply_point(box.x1, box.y1)
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        raise DataError(f"box {box} degenerate after mapping to encoder coordinates")
    return BoxPrompt(point_coords=((x0, y0), (x1, y1)))


def decode_mask(
    backend,
    emb: ImageEmbedding,
    prompt: BoxPrompt,
    orig_size: tuple[int, int],
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
) -> MaskPrediction:
    """Run the mask decoder for one prompt and threshold the best-scoring mask.

    orig_size is (height, width). The decoder returns logits already upsampled
    to the original size; the mask with the highest predicted IoU is selected
    (ties -> lowest index) and binarized at mask_threshold.
    """
    h, w = orig_size
    outputs = backend.decode(
        image_embeddings=emb.tensor,
        point_coords=prompt.coords_array(),
        point_labels=prompt.labels_array(),
        mask_input=np.zeros((1, 1, 256, 256), dtype=np.float32),
        has_mask_input=np.zeros((1,), dtype=np.float32),
        orig_im_size=np.asarray([h, w], dtype=np.float32),
    )
    masks = np.asarray(outputs["masks"], dtype=np.float32)
    iou_predictions = np.asarray(outputs["iou_predictions"], dtype=np.float32)
    low_res = np.asarray(outputs["low_res_masks"], dtype=np.float32)
    if masks.ndim != 4 or masks.shape[0] != 1 or masks.shape[2:] != (h, w):
        raise ModelContractError(f"masks output shape {masks.shape} != (1, K, {h}, {w})")
    k = masks.shape[1]
    if iou_predictions.shape != (1, k):
        raise ModelContractError(f"iou_predictions shape {iou_predictions.shape} != (1, {k})")
    if low_res.shape != (1, k, 256, 256):
        raise ModelContractError(f"low_res_masks shape {low_res.shape} != (1, {k}, 256, 256)")
    chosen = int(np.argmax(iou_predictions[0]))
    final = masks[0, chosen] > mask_threshold
    return MaskPrediction(
        low_res_logits=low_res,
        predicted_iou=iou_predictions[0],
        final_mask=final,
        chosen_index=chosen,
    )


def union_masks(masks: list[np.ndarray], shape: tuple[int, int] | None = None) -> np.ndarray:
    """Pixelwise OR of masks; an empty sequence yields all-background of `shape`."""
    if not masks:
        if shape is None:
            raise DataError("union of zero masks requires an explicit shape")
        return np.zeros(shape, dtype=bool)
    out = masks[0].astype(bool)
    for m in masks[1:]:
        if m.shape != out.shape:
            raise DataError(f"mask dimension mismatch in union: {m.shape} vs {out.shape}")
        out = out | m.astype(bool)
    return out


def segment_image(
    det_backend,
    seg_backend,
    image: np.ndarray,
    conf_thresh: float = DEFAULT_CONF_THRESH,
    nms_iou: float = DEFAULT_NMS_IOU,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
    sample_id: str | None = None,
    cache: dict | None = None,
) -> tuple[np.ndarray, list[Detection]]:
    """Full chain: detect -> NMS -> one mask per kept box -> union.

    Zero detections yield an empty mask (recorded, not an error). The image is
    encoded exactly once however many boxes are prompted.
    """
    h, w = image.shape[:2]
    det_meta = det_backend.metadata
    boxed, t = letterbox(image, det_meta.input_size, fill=det_meta.pad_fill)
    tensor = normalize(boxed, det_meta.normalization)[None, ...]
    raw = run_detector(det_backend, tensor)
    detections = nms(decode_detections(raw, t, conf_thresh), nms_iou)
    if not detections:
        return np.zeros((h, w), dtype=bool), []
    emb = encode_image(seg_backend, image, sample_id=sample_id, cache=cache)
    pieces: list[np.ndarray] = []
    for det in detections:
        try:
            prompt = box_to_prompt(det.box, emb.transform)
        except DataError as exc:
            logger.warning("skipping unpromptable detection for %s: %s", sample_id, exc)
            continue
        pred = decode_mask(seg_backend, emb, prompt, (h, w), mask_threshold)
        pieces.append(pred.final_mask)
    return union_masks(pieces, shape=(h, w)), detections
