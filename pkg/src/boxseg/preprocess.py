"""Geometric and photometric preparation with exactly invertible transforms."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import cv2
import numpy as np

from .dataset import BBox
from .errors import ConfigError, DataError

DEFAULT_PAD_FILL = 114


@dataclass(frozen=True)
class LetterboxTransform:
    """Maps original-image coordinates into a square model-input canvas.

    Forward: p_dst = p_src * scale + pad. The transform is exactly invertible
    for in-bounds points.
    """

    scale: float
    pad_x: int
    pad_y: int
    src_w: int
    src_h: int
    dst: int

    @classmethod
    def centered(cls, src_w: int, src_h: int, dst: int) -> "LetterboxTransform":
        """Aspect-preserving fit with symmetric padding (detector convention)."""
        scale = dst / max(src_w, src_h)
        pad_x = math.floor((dst - scale * src_w) / 2)
        pad_y = math.floor((dst - scale * src_h) / 2)
        return cls(scale=scale, pad_x=pad_x, pad_y=pad_y, src_w=src_w, src_h=src_h, dst=dst)

    @classmethod
    def top_left(cls, src_w: int, src_h: int, dst: int) -> "LetterboxTransform":
        """Longest side to dst, padding only bottom/right (promptable-encoder convention)."""
        scale = dst / max(src_w, src_h)
        return cls(scale=scale, pad_x=0, pad_y=0, src_w=src_w, src_h=src_h, dst=dst)

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        return (x * self.scale + self.pad_x, y * self.scale + self.pad_y)

    def invert_point(self, x: float, y: float) -> tuple[float, float]:
        return ((x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale)

    @property
    def content_size(self) -> tuple[int, int]:
        """(width, height) of the scaled image content inside the canvas."""
        return (int(round(self.src_w * self.scale)), int(round(self.src_h * self.scale)))


def letterbox(
    image: np.ndarray,
    dst: int,
    fill: int = DEFAULT_PAD_FILL,
) -> tuple[np.ndarray, LetterboxTransform]:
    """Resize into a dst x dst canvas preserving aspect ratio.

    Bilinear interpolation; the padded border is filled with `fill`.
    """
    if dst <= 0:
        raise ConfigError(f"letterbox target size must be positive, got {dst}")
    if image.ndim not in (2, 3):
        raise DataError(f"expected 2-D or 3-D image, got shape {image.shape}")
    src_h, src_w = image.shape[:2]
    if src_h == 0 or src_w == 0:
        raise DataError(f"zero-sized image: {image.shape}")
    t = LetterboxTransform.centered(src_w, src_h, dst)
    new_w = min(t.content_size[0], dst - t.pad_x)
    new_h = min(t.content_size[1], dst - t.pad_y)
    resized = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    if image.ndim == 2:
        canvas = np.full((dst, dst), fill, dtype=image.dtype)
    else:
        canvas = np.full((dst, dst, image.shape[2]), fill, dtype=image.dtype)
    canvas[t.pad_y : t.pad_y + new_h, t.pad_x : t.pad_x + new_w] = resized
    return canvas, t


def map_box(box: BBox, t: LetterboxTransform, direction: str = "forward") -> BBox:
    """Map a box through a letterbox transform.

    Inverse mapping clips to the source image bounds and rejects boxes that
    land entirely inside the padding.
    """
    if direction == "forward":
        x0, y0 = t.apply_point(box.x0, box.y0)
        x1, y1 = t.apply_point(box.x1, box.y1)
        return BBox(x0, y0, x1, y1)
    if direction == "inverse":
        x0, y0 = t.invert_point(box.x0, box.y0)
        x1, y1 = t.invert_point(box.x1, box.y1)
        mapped = BBox(x0, y0, x1, y1).clipped(t.src_w, t.src_h)
        if mapped.width <= 0 or mapped.height <= 0:
            raise DataError(f"box outside image: {box}")
        return mapped
    raise ConfigError(f"direction must be 'forward' or 'inverse', got {direction!r}")


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel affine normalization, optionally after scaling to [0, 1]."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    scale_to_unit: bool = True

    def __post_init__(self) -> None:
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("normalization mean/std must each have 3 components")
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"normalization std must be strictly positive, got {self.std}")


def normalize(image: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """uint8 image -> float32 CHW tensor: optional /255, then (x - mean) / std.

    Grayscale input is replicated to three identical channels first.
    """
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"normalize expects 1- or 3-channel image, got shape {image.shape}")
    x = image.astype(np.float32)
    if spec.scale_to_unit:
        x = x / 255.0
    mean = np.asarray(spec.mean, dtype=np.float32).reshape(1, 1, 3)
    std = np.asarray(spec.std, dtype=np.float32).reshape(1, 1, 3)
    x = (x - mean) / std
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    ops: set[str],
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same seeded random augmentation to an image and its mask."""
    unknown = ops - {"hflip"}
    if unknown:
        raise ConfigError(f"unsupported augmentation ops: {sorted(unknown)}")
    if image.shape[:2] != mask.shape[:2]:
        raise DataError(f"image {image.shape[:2]} vs mask {mask.shape[:2]} dimension mismatch")
    rng = random.Random(seed)
    if "hflip" in ops and rng.random() < 0.5:
        image = image[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    return image, mask
