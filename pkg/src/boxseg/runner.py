"""Run orchestration: configuration, the evaluate/jitter/score-masks entry
points, and deterministic persistence of results.

Each worker owns its backend sessions; records are merged and written in
(dataset_id, sample_id, model) order so output bytes never depend on the
worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .backends import create_detector_backend, create_segmenter_backend
from .bundle import ModelBundle, load_bundle
from .dataset import (
    DEFAULT_MIN_AREA,
    DatasetManifest,
    load_mask,
    read_image,
    select_training_subset,
    validate_pair,
)
from .errors import ConfigError, DataError, ModelContractError
from .jitter import JitterSpec, run_jitter_study
from .metrics import MetricsQuad, compute_quad, score_mask_dir
from .report import (
    boxplot_svg,
    summarize_records,
    write_records_jsonl,
    write_summary_csv,
)
from .segmenter import segment_image

logger = logging.getLogger(__name__)

FAILURE_ABORT_RATIO = 0.10


@dataclass(frozen=True)
class RunConfig:
    manifests: tuple[str, ...]
    bundle: str
    out_dir: str
    conf_thresh: float = 0.25
    nms_iou: float = 0.45
    mask_threshold: float = 0.0
    min_area: int = DEFAULT_MIN_AREA
    jitter_offsets: tuple[int, ...] = (0, 5, 10, 15, 20)
    subset_n: int | None = None
    subset_seed: int = 0
    workers: int = 1
    variants: tuple[str, ...] | None = None  # None -> all bundle variants

    def __post_init__(self) -> None:
        if not self.manifests:
            raise ConfigError("config requires at least one manifest path")
        if not 0.0 <= self.conf_thresh <= 1.0:
            raise ConfigError(f"conf_thresh must be in [0, 1], got {self.conf_thresh}")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ConfigError(f"nms_iou must be in (0, 1], got {self.nms_iou}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.min_area < 0:
            raise ConfigError(f"min_area must be non-negative, got {self.min_area}")
        JitterSpec(tuple(self.jitter_offsets))  # range checks

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "manifests" not in obj or "bundle" not in obj or "out_dir" not in obj:
            missing = {"manifests", "bundle", "out_dir"} - set(obj)
            raise ConfigError(f"config missing required keys: {sorted(missing)}")
        obj = dict(obj)
        obj["manifests"] = tuple(obj["manifests"])
        obj["jitter_offsets"] = tuple(obj.get("jitter_offsets", (0, 5, 10, 15, 20)))
        if obj.get("variants") is not None:
            obj["variants"] = tuple(obj["variants"])
        return cls(**obj)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["manifests"] = list(self.manifests)
        out["jitter_offsets"] = list(self.jitter_offsets)
        if self.variants is not None:
            out["variants"] = list(self.variants)
        return out


@dataclass
class SampleRecord:
    sample_id: str
    dataset_id: str
    model: str
    quad: MetricsQuad
    detections: int
    failed: bool = False
    wall_ms: float = 0.0

    def to_row(self) -> dict:
        row = {"sample_id": self.sample_id, "dataset_id": self.dataset_id, "model": self.model}
        row.update(self.quad.as_dict())
        row["detections"] = self.detections
        row["failed"] = self.failed
        return row


@dataclass
class _WorkerState:
    detector: object
    segmenters: dict[str, object] = field(default_factory=dict)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_manifest(run_dir: Path, bundle: ModelBundle, config: RunConfig, record_count: int) -> None:
    info = {
        "created": datetime.now(timezone.utc).isoformat(),
        "boxseg_version": __version__,
        "numpy_version": np.__version__,
        "bundle": str(config.bundle),
        "bundle_kind": bundle.kind,
        "model_hashes": {p.name: _sha256(p) for p in bundle.graph_paths},
        "record_count": record_count,
    }
    (run_dir / "run-manifest.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")


def _load_manifests(config: RunConfig) -> list[DatasetManifest]:
    manifests = []
    for path in config.manifests:
        manifest = DatasetManifest.load(path)
        if config.subset_n is not None:
            manifest = select_training_subset(manifest, config.subset_n, config.subset_seed)
        manifests.append(manifest)
    return manifests


def evaluate(config: RunConfig) -> Path:
    """Segment and score every eval sample under every configured variant.

    Persists records.jsonl (canonical, byte-reproducible), timings.jsonl,
    summary.csv, a config snapshot and a run manifest with model hashes.
    Per-sample failures score as empty predictions; more than 10% failures
    aborts the run with partial records persisted.
    """
    bundle = load_bundle(config.bundle)
    variants = list(config.variants) if config.variants is not None else bundle.variants
    for v in variants:
        if v not in bundle.segmenters:
            raise ConfigError(f"bundle has no segmenter variant {v!r}")
    manifests = _load_manifests(config)
    tasks = [(m, e) for m in manifests for e in m.eval_entries]
    if not tasks:
        raise DataError("empty evaluation split")

    run_dir = Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    local = threading.local()

    def state() -> _WorkerState:
        if not hasattr(local, "state"):
            local.state = _WorkerState(
                detector=create_detector_backend(bundle),
                segmenters={v: create_segmenter_backend(bundle, v) for v in variants},
            )
        return local.state

    def process(manifest: DatasetManifest, entry) -> list[SampleRecord]:
        st = state()
        image = read_image(entry.image_path)
        gt = load_mask(entry.mask_path)
        validate_pair(image, gt, entry.sample_id)
        records = []
        for variant in variants:
            seg = st.segmenters[variant]
            model = f"det+seg_{'hq' if variant == 'high_quality' else variant}"
            for backend in (st.detector, seg):
                if hasattr(backend, "bind_sample"):
                    backend.bind_sample(gt)
            start = time.perf_counter()
            try:
                pred, detections = segment_image(
                    st.detector,
                    seg,
                    image,
                    conf_thresh=config.conf_thresh,
                    nms_iou=config.nms_iou,
                    mask_threshold=config.mask_threshold,
                    sample_id=entry.sample_id,
                )
                quad = compute_quad(pred, gt)
                rec = SampleRecord(entry.sample_id, manifest.dataset_id, model, quad, len(detections))
            except Exception as exc:  # per-sample failure tolerance
                logger.error("sample %s failed under %s: %s", entry.sample_id, model, exc)
                quad = compute_quad(np.zeros_like(gt), gt)
                rec = SampleRecord(entry.sample_id, manifest.dataset_id, model, quad, 0, failed=True)
            rec.wall_ms = (time.perf_counter() - start) * 1000.0
            records.append(rec)
        return records

    all_records: list[SampleRecord] = []
    if config.workers == 1:
        for manifest, entry in tasks:
            all_records.extend(process(manifest, entry))
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for recs in pool.map(lambda t: process(*t), tasks):
                all_records.extend(recs)

    all_records.sort(key=lambda r: (r.dataset_id, r.sample_id, r.model))
    rows = [r.to_row() for r in all_records]
    failures = sum(r.failed for r in all_records)
    if failures > FAILURE_ABORT_RATIO * len(all_records):
        write_records_jsonl(run_dir / "records-partial.jsonl", rows)
        raise ModelContractError(
            f"{failures}/{len(all_records)} sample evaluations failed (>10%); "
            f"partial records in {run_dir / 'records-partial.jsonl'}"
        )

    write_records_jsonl(run_dir / "records.jsonl", rows)
    with (run_dir / "timings.jsonl").open("w", encoding="utf-8") as fh:
        for r in all_records:
            fh.write(
                json.dumps(
                    {"sample_id": r.sample_id, "model": r.model, "wall_ms": round(r.wall_ms, 3)},
                    sort_keys=True,
                )
                + "\n"
            )
    write_summary_csv(run_dir / "summary.csv", summarize_records(rows))
    _write_run_manifest(run_dir, bundle, config, len(rows))
    return run_dir


def score_masks_run(
    manifest_path: str | Path,
    pred_dir: str | Path,
    out_dir: str | Path,
    model_label: str = "external_masks",
) -> Path:
    """Score externally produced masks through the same records/summary pipeline."""
    manifest = DatasetManifest.load(manifest_path)
    entries = manifest.eval_entries
    if not entries:
        raise DataError("empty evaluation split")
    scored = score_mask_dir(
        DatasetManifest(manifest.dataset_id, manifest.modality, entries), pred_dir
    )
    rows = [
        SampleRecord(sample_id, manifest.dataset_id, model_label, quad, 0).to_row()
        for sample_id, quad in scored
    ]
    rows.sort(key=lambda r: (r["dataset_id"], r["sample_id"], r["model"]))
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_records_jsonl(run_dir / "records.jsonl", rows)
    write_summary_csv(run_dir / "summary.csv", summarize_records(rows))
    return run_dir


def jitter_run(config: RunConfig) -> Path:
    """Run the box-expansion study for each manifest; persist JSONL and box plots."""
    bundle = load_bundle(config.bundle)
    variants = list(config.variants) if config.variants is not None else bundle.variants
    spec = JitterSpec(tuple(config.jitter_offsets))
    run_dir = Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    manifests = _load_manifests(config)
    for manifest in manifests:
        for variant in variants:
            seg = create_segmenter_backend(bundle, variant)
            result = run_jitter_study(
                manifest,
                seg,
                spec,
                config.min_area,
                config.mask_threshold,
                partial_dir=run_dir,
            )
            tag = f"{manifest.dataset_id}-{variant}"
            result.save_jsonl(run_dir / f"jitter-{tag}.jsonl")
            labels = [f"DS{k}" for k in spec.offsets]
            stats = [result.summaries[k] for k in spec.offsets]
            svg = boxplot_svg(labels, stats, title=f"Dice vs box expansion ({tag})", y_label="dice")
            plots = run_dir / "plots"
            plots.mkdir(exist_ok=True)
            (plots / f"jitter-{tag}.svg").write_text(svg, encoding="utf-8")
    return run_dir
