"""Inference backends: in-process stubs for model-free testing and ONNX-backed
sessions for exported graphs.

Backend sessions are single-caller; the run orchestrator creates one backend
pair per worker.
"""

from __future__ import annotations

import numpy as np

from .bundle import (
    DECODER_OUTPUT_NAMES,
    ModelBundle,
    ModelMetadata,
    _stub_detector_meta,
    _stub_segmenter_meta,
)
from .dataset import derive_boxes
from .errors import ConfigError, ModelContractError
from .preprocess import LetterboxTransform

STUB_LOGIT = 8.0


class StubBackendBase:
    """Common per-sample ground-truth binding for stub backends."""

    def __init__(self) -> None:
        self.gt_mask: np.ndarray | None = None

    def bind_sample(self, gt_mask: np.ndarray | None) -> None:
        self.gt_mask = None if gt_mask is None else gt_mask.astype(bool)

    def _require_gt(self) -> np.ndarray:
        if self.gt_mask is None:
            raise ModelContractError("stub backend used without a bound ground-truth mask")
        return self.gt_mask


class StubDetectorBackend(StubBackendBase):
    """Emits ground-truth-derived boxes (score 1.0) or nothing, as raw tensors."""

    def __init__(self, kind: str, metadata: ModelMetadata | None = None):
        super().__init__()
        self.kind = kind
        self.metadata = metadata or _stub_detector_meta(640)
        self.run_calls = 0

    def run(self, image: np.ndarray) -> np.ndarray:
        self.run_calls += 1
        if self.kind == "empty":
            return np.zeros((1, 5, 0), dtype=np.float32)
        gt = self._require_gt()
        h, w = gt.shape
        t = LetterboxTransform.centered(w, h, self.metadata.input_size)
        boxes = derive_boxes(gt, min_area=1)
        out = np.zeros((1, 5, len(boxes)), dtype=np.float32)
        for i, box in enumerate(boxes):
            x0, y0 = t.apply_point(box.x0, box.y0)
            x1, y1 = t.apply_point(box.x1, box.y1)
            out[0, :, i] = ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, 1.0)
        return out


class StubSegmenterBackend(StubBackendBase):
    """Decoder stub: logits positive exactly inside the prompt box (oracle),
    equal to the bound ground truth (gt_passthrough), or everywhere negative."""

    def __init__(
        self,
        kind: str,
        encoder_meta: ModelMetadata | None = None,
        decoder_meta: ModelMetadata | None = None,
        num_masks: int = 3,
    ):
        super().__init__()
        self.kind = kind
        enc, dec = _stub_segmenter_meta("standard", 1024)
        self.encoder_meta = encoder_meta or enc
        self.decoder_meta = decoder_meta or dec
        self.num_masks = num_masks
        self.encode_calls = 0
        self.decode_calls = 0

    def encode(self, image: np.ndarray) -> np.ndarray:
        self.encode_calls += 1
        return np.zeros(self.encoder_meta.embedding_shape, dtype=np.float32)

    def decode(
        self,
        image_embeddings: np.ndarray,
        point_coords: np.ndarray,
        point_labels: np.ndarray,
        mask_input: np.ndarray,
        has_mask_input: np.ndarray,
        orig_im_size: np.ndarray,
    ) -> dict[str, np.ndarray]:
        self.decode_calls += 1
        h, w = (int(round(float(v))) for v in orig_im_size)
        k = self.num_masks
        full = np.full((h, w), -STUB_LOGIT, dtype=np.float32)
        low = np.full((256, 256), -STUB_LOGIT, dtype=np.float32)
        if self.kind == "oracle_box_interior":
            # Invert the encoder's longest-side scaling to recover original pixels.
            scale = self.encoder_meta.input_size / max(h, w)
            (x0, y0), (x1, y1) = point_coords[0] / scale
            xi0, yi0 = max(0, int(round(x0))), max(0, int(round(y0)))
            xi1, yi1 = min(w, int(round(x1))), min(h, int(round(y1)))
            if xi1 > xi0 and yi1 > yi0:
                full[yi0:yi1, xi0:xi1] = STUB_LOGIT
            low_scale = 256.0 / self.encoder_meta.input_size
            lx0, ly0, lx1, ly1 = (
                int(round(point_coords[0, 0, 0] * low_scale)),
                int(round(point_coords[0, 0, 1] * low_scale)),
                int(round(point_coords[0, 1, 0] * low_scale)),
                int(round(point_coords[0, 1, 1] * low_scale)),
            )
            low[max(0, ly0) : min(256, ly1), max(0, lx0) : min(256, lx1)] = STUB_LOGIT
        elif self.kind == "gt_passthrough":
            gt = self._require_gt()
            if gt.shape != (h, w):
                raise ModelContractError(
                    f"gt_passthrough stub: bound mask shape {gt.shape} != orig_im_size ({h}, {w})"
                )
            full = np.where(gt, STUB_LOGIT, -STUB_LOGIT).astype(np.float32)
        elif self.kind != "empty":
            raise ConfigError(f"unknown stub kind {self.kind!r}")
        masks = np.broadcast_to(full, (1, k, h, w)).copy()
        low_res = np.broadcast_to(low, (1, k, 256, 256)).copy()
        # Highest predicted IoU first, so argmax selection lands on index 0.
        iou = np.linspace(0.9, 0.7, k, dtype=np.float32)[None, :]
        return {"masks": masks, "iou_predictions": iou, "low_res_masks": low_res}


def stub_backends(
    kind: str,
    detector_input_size: int = 640,
    encoder_input_size: int = 1024,
) -> tuple[StubDetectorBackend, StubSegmenterBackend]:
    """Build a (detector, segmenter) stub pair of the given oracle kind."""
    if kind not in ("oracle_box_interior", "gt_passthrough", "empty"):
        raise ConfigError(f"unknown stub kind {kind!r}")
    det = StubDetectorBackend(kind, _stub_detector_meta(detector_input_size))
    enc, dec = _stub_segmenter_meta("standard", encoder_input_size)
    seg = StubSegmenterBackend(kind, enc, dec)
    return det, seg


def _make_session(meta: ModelMetadata):
    """Pick an execution engine for a graph: onnxruntime when installed,
    otherwise the bundled numpy executor."""
    try:
        import onnxruntime as ort  # type: ignore
    except ImportError:
        from .onnxexec import GraphExecutor

        return GraphExecutor.from_file(meta.graph_path)
    session = ort.InferenceSession(str(meta.graph_path), providers=["CPUExecutionProvider"])

    class _OrtSession:
        def run(self, feeds: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
            names = [o.name for o in session.get_outputs()]
            values = session.run(names, feeds)
            return dict(zip(names, values))

    return _OrtSession()


class OnnxDetectorBackend:
    def __init__(self, metadata: ModelMetadata):
        self.metadata = metadata
        self._session = _make_session(metadata)

    def run(self, image: np.ndarray) -> np.ndarray:
        outputs = self._session.run({self.metadata.input_names[0]: image.astype(np.float32)})
        return outputs[self.metadata.output_names[0]]


class OnnxSegmenterBackend:
    def __init__(self, encoder_meta: ModelMetadata, decoder_meta: ModelMetadata):
        self.encoder_meta = encoder_meta
        self.decoder_meta = decoder_meta
        self._encoder = _make_session(encoder_meta)
        self._decoder = _make_session(decoder_meta)

    def encode(self, image: np.ndarray) -> np.ndarray:
        outputs = self._encoder.run({self.encoder_meta.input_names[0]: image.astype(np.float32)})
        return outputs[self.encoder_meta.output_names[0]]

    def decode(self, **inputs: np.ndarray) -> dict[str, np.ndarray]:
        outputs = self._decoder.run(inputs)
        return {name: outputs[name] for name in DECODER_OUTPUT_NAMES}


def create_detector_backend(bundle: ModelBundle):
    if bundle.kind == "stub":
        return StubDetectorBackend(bundle.stub_kind, bundle.detector)
    return OnnxDetectorBackend(bundle.detector)


def create_segmenter_backend(bundle: ModelBundle, variant: str):
    if variant not in bundle.segmenters:
        raise ConfigError(f"bundle has no segmenter variant {variant!r}")
    encoder_meta, decoder_meta = bundle.segmenters[variant]
    if bundle.kind == "stub":
        return StubSegmenterBackend(bundle.stub_kind, encoder_meta, decoder_meta)
    return OnnxSegmenterBackend(encoder_meta, decoder_meta)
