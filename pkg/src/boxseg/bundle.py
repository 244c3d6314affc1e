"""Model bundle loading: metadata contracts for exported graphs, validated
against the graphs themselves at load time.

A bundle is a directory with a `bundle.json` describing a detector and one or
more promptable-segmenter variants. `kind: "stub"` bundles declare in-process
test backends and reference no graph files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import onnxpb
from .errors import ConfigError, ModelContractError
from .preprocess import NormalizationSpec

SEGMENTER_VARIANTS = ("standard", "high_quality")
STUB_KINDS = ("oracle_box_interior", "gt_passthrough", "empty")

DECODER_INPUT_NAMES = (
    "image_embeddings",
    "point_coords",
    "point_labels",
    "mask_input",
    "has_mask_input",
    "orig_im_size",
)
DECODER_OUTPUT_NAMES = ("masks", "iou_predictions", "low_res_masks")

DETECTOR_NORMALIZATION = NormalizationSpec(mean=(0.0, 0.0, 0.0), std=(1.0, 1.0, 1.0), scale_to_unit=True)
SAM_NORMALIZATION = NormalizationSpec(
    mean=(123.675, 116.28, 103.53),
    std=(58.395, 57.12, 57.375),
    scale_to_unit=False,
)


@dataclass(frozen=True)
class ModelMetadata:
    """Declared contract of one exported graph (names, shapes, preprocessing)."""

    model_kind: str  # detector | segmenter_encoder | segmenter_decoder
    variant: str = "n/a"  # standard | high_quality | n/a
    graph_path: Path | None = None
    input_names: tuple[str, ...] = ()
    input_shapes: tuple[tuple[int | None, ...], ...] = ()
    output_names: tuple[str, ...] = ()
    output_shapes: tuple[tuple[int | None, ...], ...] = ()
    input_size: int = 0
    pad_fill: int = 0
    normalization: NormalizationSpec = DETECTOR_NORMALIZATION

    @property
    def num_classes(self) -> int:
        """Detector: C from the declared 1x(4+C)xN output layout."""
        rows = self.output_shapes[0][1]
        if rows is None or rows < 5:
            raise ModelContractError(f"detector output layout must declare 4+C rows, got {rows}")
        return int(rows) - 4

    @property
    def num_anchors(self) -> int | None:
        """Detector: declared N, or None when dynamic."""
        n = self.output_shapes[0][2]
        return None if n is None else int(n)

    @property
    def embedding_shape(self) -> tuple[int, ...]:
        """Encoder: declared embedding tensor shape."""
        return tuple(int(d) for d in self.output_shapes[0])


@dataclass
class ModelBundle:
    kind: str  # onnx | stub
    detector: ModelMetadata
    segmenters: dict[str, tuple[ModelMetadata, ModelMetadata]]  # variant -> (encoder, decoder)
    root: Path
    stub_kind: str | None = None
    graph_paths: list[Path] = field(default_factory=list)

    @property
    def variants(self) -> list[str]:
        return sorted(self.segmenters)


def _require_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _parse_norm(obj: dict, where: str) -> NormalizationSpec:
    _require_keys(obj, {"mean", "std", "scale_to_unit"}, where)
    try:
        return NormalizationSpec(
            mean=tuple(float(v) for v in obj["mean"]),
            std=tuple(float(v) for v in obj["std"]),
            scale_to_unit=bool(obj["scale_to_unit"]),
        )
    except KeyError as exc:
        raise ConfigError(f"{where} missing key {exc}") from exc


def _parse_shapes(raw, where: str) -> tuple[tuple[int | None, ...], ...]:
    shapes = []
    for shape in raw:
        shapes.append(tuple(None if d is None else int(d) for d in shape))
    if not shapes:
        raise ConfigError(f"{where} declares no shapes")
    return tuple(shapes)


def _parse_metadata(obj: dict, root: Path, where: str) -> ModelMetadata:
    allowed = {
        "model_kind",
        "variant",
        "graph_path",
        "input_names",
        "input_shapes",
        "output_names",
        "output_shapes",
        "preprocessing",
    }
    _require_keys(obj, allowed, where)
    try:
        model_kind = obj["model_kind"]
        input_names = tuple(obj["input_names"])
        output_names = tuple(obj["output_names"])
    except KeyError as exc:
        raise ConfigError(f"{where} missing key {exc}") from exc
    if model_kind not in ("detector", "segmenter_encoder", "segmenter_decoder"):
        raise ConfigError(f"{where}: unknown model_kind {model_kind!r}")
    pre = obj.get("preprocessing", {})
    _require_keys(pre, {"input_size", "pad_fill", "normalization"}, f"{where}.preprocessing")
    norm = (
        _parse_norm(pre["normalization"], f"{where}.normalization")
        if "normalization" in pre
        else (SAM_NORMALIZATION if model_kind.startswith("segmenter") else DETECTOR_NORMALIZATION)
    )
    graph_path = obj.get("graph_path")
    return ModelMetadata(
        model_kind=model_kind,
        variant=obj.get("variant", "n/a"),
        graph_path=(root / graph_path) if graph_path else None,
        input_names=input_names,
        input_shapes=_parse_shapes(obj["input_shapes"], where),
        output_names=output_names,
        output_shapes=_parse_shapes(obj["output_shapes"], where),
        input_size=int(pre.get("input_size", 0)),
        pad_fill=int(pre.get("pad_fill", 0)),
        normalization=norm,
    )


def _dims_compatible(declared: tuple[int | None, ...], actual: tuple[object, ...]) -> bool:
    if len(declared) != len(actual):
        return False
    for d, a in zip(declared, actual):
        if d is None or not isinstance(a, int):
            continue  # either side dynamic
        if d != a:
            return False
    return True


def _validate_graph(meta: ModelMetadata, where: str) -> None:
    """Check every declared input/output name and shape against the graph file."""
    model = onnxpb.load_model(meta.graph_path)
    graph_inputs = {
        t.name: t for t in model.graph.inputs if t.name not in model.graph.initializers
    }
    graph_outputs = {t.name: t for t in model.graph.outputs}
    for name, declared in zip(meta.input_names, meta.input_shapes):
        if name not in graph_inputs:
            raise ModelContractError(f"{where}: graph {meta.graph_path} has no input {name!r}")
        if not _dims_compatible(declared, graph_inputs[name].dims):
            raise ModelContractError(
                f"{where}: input {name!r} shape {graph_inputs[name].dims} != declared {declared}"
            )
    for name, declared in zip(meta.output_names, meta.output_shapes):
        if name not in graph_outputs:
            raise ModelContractError(f"{where}: graph {meta.graph_path} has no output {name!r}")
        if not _dims_compatible(declared, graph_outputs[name].dims):
            raise ModelContractError(
                f"{where}: output {name!r} shape {graph_outputs[name].dims} != declared {declared}"
            )
    undeclared = set(graph_inputs) - set(meta.input_names)
    if undeclared:
        raise ModelContractError(f"{where}: graph requires undeclared inputs {sorted(undeclared)}")


def _stub_detector_meta(input_size: int) -> ModelMetadata:
    return ModelMetadata(
        model_kind="detector",
        input_names=("images",),
        input_shapes=((1, 3, input_size, input_size),),
        output_names=("preds",),
        output_shapes=((1, 5, None),),
        input_size=input_size,
        pad_fill=114,
        normalization=DETECTOR_NORMALIZATION,
    )


def _stub_segmenter_meta(variant: str, input_size: int) -> tuple[ModelMetadata, ModelMetadata]:
    encoder = ModelMetadata(
        model_kind="segmenter_encoder",
        variant=variant,
        input_names=("images",),
        input_shapes=((1, 3, input_size, input_size),),
        output_names=("image_embeddings",),
        output_shapes=((1, 256, 64, 64),),
        input_size=input_size,
        pad_fill=0,
        normalization=SAM_NORMALIZATION,
    )
    decoder = ModelMetadata(
        model_kind="segmenter_decoder",
        variant=variant,
        input_names=DECODER_INPUT_NAMES,
        input_shapes=(
            (1, 256, 64, 64),
            (1, None, 2),
            (1, None),
            (1, 1, 256, 256),
            (1,),
            (2,),
        ),
        output_names=DECODER_OUTPUT_NAMES,
        output_shapes=((1, None, None, None), (1, None), (1, None, 256, 256)),
        input_size=input_size,
        pad_fill=0,
        normalization=SAM_NORMALIZATION,
    )
    return encoder, decoder


def load_bundle(path: str | Path) -> ModelBundle:
    """Load and validate a model bundle description.

    For ONNX bundles every declared tensor name/shape is verified against the
    graph file; any mismatch is fatal and names the offending tensor.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"bundle file not found: {path}")
    root = path.parent
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bundle {path} is not valid JSON: {exc}") from exc

    kind = obj.get("kind")
    if kind == "stub":
        _require_keys(
            obj, {"kind", "stub_kind", "variants", "detector_input_size", "encoder_input_size"}, "stub bundle"
        )
        stub_kind = obj.get("stub_kind", "oracle_box_interior")
        if stub_kind not in STUB_KINDS:
            raise ConfigError(f"unknown stub_kind {stub_kind!r}; expected one of {STUB_KINDS}")
        variants = obj.get("variants", ["standard"])
        for v in variants:
            if v not in SEGMENTER_VARIANTS:
                raise ConfigError(f"unknown segmenter variant {v!r}")
        det_size = int(obj.get("detector_input_size", 640))
        enc_size = int(obj.get("encoder_input_size", 1024))
        segmenters = {v: _stub_segmenter_meta(v, enc_size) for v in variants}
        return ModelBundle(
            kind="stub",
            detector=_stub_detector_meta(det_size),
            segmenters=segmenters,
            root=root,
            stub_kind=stub_kind,
        )

    if kind != "onnx":
        raise ConfigError(f"bundle kind must be 'onnx' or 'stub', got {kind!r}")
    _require_keys(obj, {"kind", "detector", "segmenters"}, "bundle")
    if "detector" not in obj or "segmenters" not in obj:
        raise ConfigError("onnx bundle requires 'detector' and 'segmenters'")

    detector = _parse_metadata(obj["detector"], root, "detector")
    if len(detector.input_names) != 1 or len(detector.output_names) != 1:
        raise ConfigError("detector metadata must declare exactly one input and one output")
    _validate_graph(detector, "detector")
    if detector.num_classes < 1:
        raise ConfigError("detector must declare at least one class")

    segmenters: dict[str, tuple[ModelMetadata, ModelMetadata]] = {}
    graph_paths = [detector.graph_path]
    for variant, pair in obj["segmenters"].items():
        if variant not in SEGMENTER_VARIANTS:
            raise ConfigError(f"unknown segmenter variant {variant!r}")
        _require_keys(pair, {"encoder", "decoder"}, f"segmenters.{variant}")
        encoder = _parse_metadata(pair["encoder"], root, f"segmenters.{variant}.encoder")
        decoder = _parse_metadata(pair["decoder"], root, f"segmenters.{variant}.decoder")
        for required in DECODER_INPUT_NAMES:
            if required not in decoder.input_names:
                raise ModelContractError(f"segmenters.{variant}.decoder does not declare input {required!r}")
        for required in DECODER_OUTPUT_NAMES:
            if required not in decoder.output_names:
                raise ModelContractError(
                    f"segmenters.{variant}.decoder does not declare output {required!r}"
                )
        _validate_graph(encoder, f"segmenters.{variant}.encoder")
        _validate_graph(decoder, f"segmenters.{variant}.decoder")
        segmenters[variant] = (encoder, decoder)
        graph_paths.extend([encoder.graph_path, decoder.graph_path])
    if not segmenters:
        raise ConfigError("bundle declares no segmenter variants")
    return ModelBundle(
        kind="onnx",
        detector=detector,
        segmenters=segmenters,
        root=root,
        graph_paths=[p for p in graph_paths if p is not None],
    )
