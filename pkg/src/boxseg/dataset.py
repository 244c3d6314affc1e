"""Dataset ingestion: image/mask pairing, mask binarization, ground-truth boxes,
training-subset selection and detector label export.

Masks are represented as boolean numpy arrays of shape (H, W); boxes use a
half-open pixel convention [x0, x1) x [y0, y1) in original-image coordinates.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

MODALITIES = ("ultrasound", "ct", "xray", "other")
SPLITS = ("train", "eval")
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

BINARIZE_THRESHOLD = 128
DEFAULT_MIN_AREA = 16


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, half-open: [x0, x1) x [y0, y1), pixels."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def is_valid(self) -> bool:
        return self.x0 < self.x1 and self.y0 < self.y1

    def check_bounds(self, width: int, height: int) -> None:
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise ValueError(f"box {self} violates bounds {width}x{height}")

    def clipped(self, width: float, height: float) -> "BBox":
        return BBox(
            min(max(self.x0, 0.0), width),
            min(max(self.y0, 0.0), height),
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
        )

    def to_int(self) -> tuple[int, int, int, int]:
        return (
            int(round(self.x0)),
            int(round(self.y0)),
            int(round(self.x1)),
            int(round(self.y1)),
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: str
    mask_path: str
    split: str = "eval"


@dataclass
class DatasetManifest:
    dataset_id: str
    modality: str
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ConfigError(f"unknown modality {self.modality!r}; expected one of {MODALITIES}")
        ids = [e.sample_id for e in self.entries]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate sample_ids in manifest: {dupes}")

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    @property
    def train_entries(self) -> list[ManifestEntry]:
        return self.split_entries("train")

    @property
    def eval_entries(self) -> list[ManifestEntry]:
        return self.split_entries("eval")

    def save(self, path: str | Path) -> None:
        """Write as JSON Lines: one header object, then one object per entry."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"dataset_id": self.dataset_id, "modality": self.modality}) + "\n")
            for e in self.entries:
                fh.write(
                    json.dumps(
                        {
                            "sample_id": e.sample_id,
                            "image_path": e.image_path,
                            "mask_path": e.mask_path,
                            "split": e.split,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path, validate_paths: bool = True) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        with path.open("r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        if not lines:
            raise DataError(f"manifest is empty: {path}")
        try:
            header = json.loads(lines[0])
            rows = [json.loads(ln) for ln in lines[1:]]
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest {path} is not valid JSON Lines: {exc}") from exc
        if "dataset_id" not in header or "modality" not in header:
            raise DataError(f"manifest {path} missing dataset_id/modality header line")
        entries = []
        for row in rows:
            if row.get("split", "eval") not in SPLITS:
                raise DataError(f"bad split {row.get('split')!r} for sample {row.get('sample_id')!r}")
            entries.append(
                ManifestEntry(
                    sample_id=row["sample_id"],
                    image_path=row["image_path"],
                    mask_path=row["mask_path"],
                    split=row.get("split", "eval"),
                )
            )
        manifest = cls(dataset_id=header["dataset_id"], modality=header["modality"], entries=entries)
        if validate_paths:
            missing = [
                p
                for e in manifest.entries
                for p in (e.image_path, e.mask_path)
                if not Path(p).is_file()
            ]
            if missing:
                raise DataError(f"manifest references missing files, first few: {missing[:5]}")
        return manifest


def _scan_stems(directory: Path) -> dict[str, Path]:
    """Map filename stem -> path for image files in a directory (non-recursive)."""
    stems: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if not p.is_file() or p.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if p.stem in stems:
            raise DataError(f"duplicate stem {p.stem!r} in {directory}: {stems[p.stem].name} and {p.name}")
        stems[p.stem] = p
    return stems


def cross_reference(
    images_dir: str | Path,
    masks_dir: str | Path,
    dataset_id: str,
    modality: str,
) -> tuple[DatasetManifest, list[str]]:
    """Pair images with masks by filename stem.

    Returns (manifest, warnings); warnings name every unmatched file from either
    directory. Raises DataError when the intersection is empty.
    """
    images_dir, masks_dir = Path(images_dir), Path(masks_dir)
    for d in (images_dir, masks_dir):
        if not d.is_dir():
            raise DataError(f"not a readable directory: {d}")
    images = _scan_stems(images_dir)
    masks = _scan_stems(masks_dir)
    matched = sorted(set(images) & set(masks))
    if not matched:
        raise DataError(f"no matched pairs between {images_dir} and {masks_dir}")
    warnings: list[str] = []
    for stem in sorted(set(images) - set(masks)):
        warnings.append(f"image without mask: {images[stem].name}")
    for stem in sorted(set(masks) - set(images)):
        warnings.append(f"mask without image: {masks[stem].name}")
    entries = [
        ManifestEntry(sample_id=stem, image_path=str(images[stem]), mask_path=str(masks[stem]))
        for stem in matched
    ]
    return DatasetManifest(dataset_id=dataset_id, modality=modality, entries=entries), warnings


def read_image(path: str | Path) -> np.ndarray:
    """Read an image as uint8, grayscale (H, W) or RGB (H, W, 3)."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"cannot read image: {path}")
    if img.dtype != np.uint8:
        raise DataError(f"expected 8-bit image, got {img.dtype}: {path}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[:, :, :3]
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img


def read_mask_image(path: str | Path) -> np.ndarray:
    """Read a mask image as single-channel uint8; multi-channel collapses by max."""
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"cannot read mask: {path}")
    if img.dtype != np.uint8:
        raise DataError(f"expected 8-bit mask, got {img.dtype}: {path}")
    if img.ndim == 3:
        logger.warning("mask %s has %d channels; collapsing by per-pixel max", path, img.shape[2])
        img = img.max(axis=2)
    return img


def binarize_mask(gray: np.ndarray) -> np.ndarray:
    """Threshold an 8-bit grayscale image: foreground iff value >= 128."""
    if gray.ndim != 2:
        raise DataError(f"binarize_mask expects single-channel input, got shape {gray.shape}")
    return gray >= BINARIZE_THRESHOLD


def load_mask(path: str | Path) -> np.ndarray:
    return binarize_mask(read_mask_image(path))


def derive_boxes(mask: np.ndarray, min_area: int = DEFAULT_MIN_AREA) -> list[BBox]:
    """Tight boxes of the 8-connected foreground components with area >= min_area.

    Tight: every component pixel lies inside its box and each box edge touches
    at least one component pixel. Sorted by (y0, x0).
    """
    if mask.ndim != 2:
        raise DataError(f"mask must be 2-D, got shape {mask.shape}")
    if not mask.any():
        return []
    n, _, stats, _ = cv2.connectedComponentsWithStats(mask.astype(np.uint8), connectivity=8)
    boxes = []
    for i in range(1, n):  # label 0 is background
        left, top, w, h, area = stats[i]
        if area >= min_area:
            boxes.append(BBox(float(left), float(top), float(left + w), float(top + h)))
    boxes.sort(key=lambda b: (b.y0, b.x0))
    return boxes


def select_training_subset(manifest: DatasetManifest, n: int, seed: int) -> DatasetManifest:
    """Mark exactly n entries split=train, the rest eval.

    Selection ranks sample_ids by sha256(seed:sample_id), so the split is a pure
    function of (sample_ids, n, seed) and identical on every platform.
    """
    if n < 0:
        raise ConfigError(f"subset size must be non-negative, got {n}")
    if n > len(manifest.entries):
        raise ConfigError(f"subset size {n} exceeds entry count {len(manifest.entries)}")

    def rank(sample_id: str) -> tuple[str, str]:
        digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).hexdigest()
        return (digest, sample_id)

    ordered = sorted((e.sample_id for e in manifest.entries), key=rank)
    train_ids = set(ordered[:n])
    entries = [
        replace(e, split="train" if e.sample_id in train_ids else "eval")
        for e in sorted(manifest.entries, key=lambda e: e.sample_id)
    ]
    return DatasetManifest(dataset_id=manifest.dataset_id, modality=manifest.modality, entries=entries)


def export_detector_labels(
    manifest: DatasetManifest,
    min_area: int,
    out_dir: str | Path,
) -> int:
    """Write one detector label file per train entry.

    Format: one line per derived box, `0 cx cy w h`, center/size normalized to
    [0, 1] by the image dimensions, six decimal places. Returns the file count.
    """
    train = manifest.train_entries
    if not train:
        raise DataError("manifest has no train entries; run subset selection first")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"label output dir not writable: {out_dir}: {exc}") from exc
    count = 0
    for entry in train:
        mask = load_mask(entry.mask_path)
        h, w = mask.shape
        lines = []
        for box in derive_boxes(mask, min_area=min_area):
            cx = (box.x0 + box.x1) / 2.0 / w
            cy = (box.y0 + box.y1) / 2.0 / h
            bw = box.width / w
            bh = box.height / h
            lines.append(f"0 {cx:.6f} {cy:.6f} {bw:.6f} {bh:.6f}")
        (out_dir / f"{entry.sample_id}.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
        count += 1
    return count


def validate_pair(image: np.ndarray, mask: np.ndarray, sample_id: str = "?") -> None:
    """Check that a mask's dimensions equal its paired image's dimensions."""
    if image.shape[:2] != mask.shape[:2]:
        raise DataError(
            f"sample {sample_id}: image {image.shape[:2]} vs mask {mask.shape[:2]} dimension mismatch"
        )
