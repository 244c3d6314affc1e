"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 model-contract error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .dataset import (
    DEFAULT_MIN_AREA,
    DatasetManifest,
    cross_reference,
    export_detector_labels,
    select_training_subset,
)
from .errors import BoxsegError, ConfigError
from .report import report
from .runner import RunConfig, evaluate, jitter_run, score_masks_run


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors share the config exit code
        raise ConfigError(message)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; explicit flags override its values")
    p.add_argument("--manifest", action="append", default=None, help="manifest JSONL (repeatable)")
    p.add_argument("--bundle", help="bundle.json path")
    p.add_argument("--out-dir", help="run output directory")
    p.add_argument("--conf-thresh", type=float, default=None)
    p.add_argument("--nms-iou", type=float, default=None)
    p.add_argument("--mask-threshold", type=float, default=None)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--offsets", default=None, help="comma-separated jitter offsets, e.g. 0,5,10")
    p.add_argument("--subset-n", type=int, default=None)
    p.add_argument("--subset-seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--variants", default=None, help="comma-separated segmenter variants")


def _run_config(args: argparse.Namespace) -> RunConfig:
    obj: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config file must contain a JSON object")
    overrides = {
        "manifests": args.manifest,
        "bundle": args.bundle,
        "out_dir": args.out_dir,
        "conf_thresh": args.conf_thresh,
        "nms_iou": args.nms_iou,
        "mask_threshold": args.mask_threshold,
        "min_area": args.min_area,
        "subset_n": args.subset_n,
        "subset_seed": args.subset_seed,
        "workers": args.workers,
    }
    if args.offsets is not None:
        overrides["jitter_offsets"] = [int(v) for v in args.offsets.split(",") if v.strip()]
    if args.variants is not None:
        overrides["variants"] = [v.strip() for v in args.variants.split(",") if v.strip()]
    for key, value in overrides.items():
        if value is not None:
            obj[key] = value
    return RunConfig.from_dict(obj)


def build_parser() -> _Parser:
    parser = _Parser(prog="boxseg", description="Box-prompted segmentation evaluation engine")
    parser.add_argument("--version", action="version", version=f"boxseg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="cross-reference images and masks into a manifest")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--dataset-id", required=True)
    p.add_argument("--modality", required=True, choices=["ultrasound", "ct", "xray", "other"])
    p.add_argument("--out", required=True, help="output manifest JSONL path")

    p = sub.add_parser("subset", help="mark a seeded training subset in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("labels", help="export detector training labels for train entries")
    p.add_argument("--manifest", required=True)
    p.add_argument("--min-area", type=int, default=DEFAULT_MIN_AREA)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="run detect->prompt->segment over the eval split")
    _add_run_flags(p)

    p = sub.add_parser("jitter", help="box-expansion robustness study")
    _add_run_flags(p)

    p = sub.add_parser("score-masks", help="score externally produced masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--label", default="external_masks")

    p = sub.add_parser("report", help="tables and box plots from a run directory")
    p.add_argument("--run-dir", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "ingest":
            manifest, warnings = cross_reference(args.images, args.masks, args.dataset_id, args.modality)
            manifest.save(args.out)
            for w in warnings:
                print(f"warning: {w}", file=sys.stderr)
            print(f"wrote {len(manifest.entries)} entries to {args.out} ({len(warnings)} warnings)")
        elif args.command == "subset":
            manifest = DatasetManifest.load(args.manifest)
            subset = select_training_subset(manifest, args.n, args.seed)
            subset.save(args.out)
            print(f"wrote {args.out}: {len(subset.train_entries)} train / {len(subset.eval_entries)} eval")
        elif args.command == "labels":
            manifest = DatasetManifest.load(args.manifest)
            count = export_detector_labels(manifest, args.min_area, args.out_dir)
            print(f"wrote {count} label files to {args.out_dir}")
        elif args.command == "evaluate":
            run_dir = evaluate(_run_config(args))
            print(f"run complete: {run_dir}")
        elif args.command == "jitter":
            run_dir = jitter_run(_run_config(args))
            print(f"jitter study complete: {run_dir}")
        elif args.command == "score-masks":
            run_dir = score_masks_run(args.manifest, args.pred_dir, args.out_dir, args.label)
            print(f"scored external masks: {run_dir}")
        elif args.command == "report":
            written = report(args.run_dir)
            for path in written:
                print(f"wrote {path}")
        return 0
    except BoxsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
