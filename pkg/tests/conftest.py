import json

import cv2
import numpy as np
import pytest

from boxseg.dataset import DatasetManifest, ManifestEntry


def write_png(path, arr):
    ok = cv2.imwrite(str(path), arr)
    assert ok, f"failed to write {path}"


def make_rect_mask(h, w, rects):
    """rects: list of (x0, y0, x1, y1) half-open foreground rectangles."""
    mask = np.zeros((h, w), dtype=np.uint8)
    for x0, y0, x1, y1 in rects:
        mask[y0:y1, x0:x1] = 255
    return mask


@pytest.fixture
def synth_dataset(tmp_path):
    """Factory: build an image/mask directory pair plus manifest of rectangle GTs.

    Returns (manifest, manifest_path). Rectangles are sized to stay disjoint and
    above the default min_area.
    """

    def build(count=10, size=64, two_components_every=4, seed=3):
        rng = np.random.default_rng(seed)
        images_dir = tmp_path / "images"
        masks_dir = tmp_path / "masks"
        images_dir.mkdir(exist_ok=True)
        masks_dir.mkdir(exist_ok=True)
        entries = []
        for i in range(count):
            sample_id = f"s{i:03d}"
            w0 = int(rng.integers(10, size // 3))
            h0 = int(rng.integers(10, size // 3))
            x0 = int(rng.integers(1, size // 2 - w0))
            y0 = int(rng.integers(1, size // 2 - h0))
            rects = [(x0, y0, x0 + w0, y0 + h0)]
            if two_components_every and i % two_components_every == 0:
                # second rectangle in the lower-right quadrant, always disjoint
                w1 = int(rng.integers(8, size // 4))
                h1 = int(rng.integers(8, size // 4))
                x1 = int(rng.integers(size // 2 + 2, size - w1 - 1))
                y1 = int(rng.integers(size // 2 + 2, size - h1 - 1))
                rects.append((x1, y1, x1 + w1, y1 + h1))
            mask = make_rect_mask(size, size, rects)
            image = rng.integers(0, 255, size=(size, size), dtype=np.uint8)
            write_png(images_dir / f"{sample_id}.png", image)
            write_png(masks_dir / f"{sample_id}.png", mask)
            entries.append(
                ManifestEntry(
                    sample_id=sample_id,
                    image_path=str(images_dir / f"{sample_id}.png"),
                    mask_path=str(masks_dir / f"{sample_id}.png"),
                )
            )
        manifest = DatasetManifest(dataset_id="synth", modality="other", entries=entries)
        manifest_path = tmp_path / "manifest.jsonl"
        manifest.save(manifest_path)
        return manifest, manifest_path

    return build


@pytest.fixture
def stub_bundle_path(tmp_path):
    """Factory: write a stub bundle.json and return its path."""

    def build(stub_kind="oracle_box_interior", variants=("standard",), detector_input_size=640):
        path = tmp_path / f"bundle-{stub_kind}.json"
        path.write_text(
            json.dumps(
                {
                    "kind": "stub",
                    "stub_kind": stub_kind,
                    "variants": list(variants),
                    "detector_input_size": detector_input_size,
                }
            )
        )
        return path

    return build
