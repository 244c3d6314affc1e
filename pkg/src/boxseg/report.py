"""Result records IO, summary tables and SVG box plots.

Plots are plain hand-built SVG so tests can assert on parsed geometry; each
box-plot group carries css classes (box/median/whisker/outlier).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import DataError
from .metrics import METRIC_NAMES, SummaryStats, summarize

RECORD_KEYS = (
    "sample_id",
    "dataset_id",
    "model",
    "dice",
    "precision",
    "recall",
    "f1",
    "detections",
    "failed",
)


def write_records_jsonl(path: str | Path, records: list[dict]) -> None:
    """Canonical record serialization: sorted keys, compact separators.

    Byte-identical for identical record content, independent of worker count.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({k: rec[k] for k in RECORD_KEYS}, sort_keys=True) + "\n")


def read_records_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"records file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    if not records:
        raise DataError(f"records file is empty: {path}")
    return records


def summarize_records(records: list[dict]) -> dict[tuple[str, str, str], SummaryStats]:
    """SummaryStats per (dataset_id, model, metric)."""
    grouped: dict[tuple[str, str], list[dict]] = {}
    for rec in records:
        grouped.setdefault((rec["dataset_id"], rec["model"]), []).append(rec)
    out: dict[tuple[str, str, str], SummaryStats] = {}
    for (dataset_id, model), recs in sorted(grouped.items()):
        for metric in METRIC_NAMES:
            out[(dataset_id, model, metric)] = summarize([r[metric] for r in recs])
    return out


def write_summary_csv(path: str | Path, summaries: dict[tuple[str, str, str], SummaryStats]) -> None:
    """Mean/Median/Std rows per (dataset, model, metric), mirroring the result tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset_id", "model", "metric", "mean", "median", "std", "n"])
        for (dataset_id, model, metric), stats in sorted(summaries.items()):
            writer.writerow(
                [
                    dataset_id,
                    model,
                    metric,
                    f"{stats.mean:.12g}",
                    f"{stats.median:.12g}",
                    f"{stats.std:.12g}",
                    stats.n,
                ]
            )


def read_summary_csv(path: str | Path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def markdown_table(summaries: dict[tuple[str, str, str], SummaryStats]) -> str:
    """One block per (dataset, model): rows Mean/Median/Std, columns per metric."""
    pairs = sorted({(d, m) for d, m, _ in summaries})
    lines: list[str] = []
    for dataset_id, model in pairs:
        lines.append(f"### {dataset_id} — {model}")
        lines.append("")
        header = ["Stats"] + [metric.capitalize() for metric in METRIC_NAMES]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for stat_name in ("mean", "median", "std"):
            row = [stat_name.capitalize()]
            for metric in METRIC_NAMES:
                stats = summaries[(dataset_id, model, metric)]
                row.append(f"{getattr(stats, stat_name):.4f}")
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def boxplot_svg(
    labels: list[str],
    stats: list[SummaryStats],
    title: str,
    y_label: str = "",
    y_range: tuple[float, float] = (0.0, 1.0),
) -> str:
    """Render one box-and-whisker group per label.

    Geometry: whisker line + caps, IQR rect, median line, one circle per
    outlier. Zero-height IQRs render as zero-height rects.
    """
    if len(labels) != len(stats):
        raise DataError("boxplot labels and stats must align")
    if not labels:
        raise DataError("boxplot requires at least one group")
    margin_l, margin_r, margin_t, margin_b = 60, 20, 40, 60
    slot_w, plot_h = 110, 320
    box_w = 46
    width = margin_l + slot_w * len(labels) + margin_r
    height = margin_t + plot_h + margin_b
    lo, hi = y_range
    span = hi - lo or 1.0

    def y(v: float) -> float:
        return margin_t + (hi - v) / span * plot_h

    parts: list[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{title}</text>',
        f'<rect x="{margin_l}" y="{margin_t}" width="{slot_w * len(labels)}" height="{plot_h}" '
        f'fill="none" stroke="#999" class="frame"/>',
    ]
    for i in range(5):
        v = lo + span * i / 4
        parts.append(
            f'<line x1="{margin_l - 5}" y1="{y(v):.2f}" x2="{margin_l}" y2="{y(v):.2f}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{margin_l - 9}" y="{y(v) + 4:.2f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{v:.2f}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="14" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif" transform="rotate(-90 14 {margin_t + plot_h / 2:.1f})">{y_label}</text>'
        )
    for i, (label, s) in enumerate(zip(labels, stats)):
        cx = margin_l + slot_w * i + slot_w / 2
        x0 = cx - box_w / 2
        parts.append(f'<g class="boxgroup" data-label="{label}">')
        parts.append(
            f'<line class="whisker" x1="{cx:.2f}" y1="{y(s.whisker_lo):.2f}" '
            f'x2="{cx:.2f}" y2="{y(s.q1):.2f}" stroke="#333"/>'
        )
        parts.append(
            f'<line class="whisker" x1="{cx:.2f}" y1="{y(s.q3):.2f}" '
            f'x2="{cx:.2f}" y2="{y(s.whisker_hi):.2f}" stroke="#333"/>'
        )
        for wv in (s.whisker_lo, s.whisker_hi):
            parts.append(
                f'<line class="whisker-cap" x1="{cx - box_w / 4:.2f}" y1="{y(wv):.2f}" '
                f'x2="{cx + box_w / 4:.2f}" y2="{y(wv):.2f}" stroke="#333"/>'
            )
        parts.append(
            f'<rect class="box" x="{x0:.2f}" y="{y(s.q3):.2f}" width="{box_w}" '
            f'height="{max(0.0, y(s.q1) - y(s.q3)):.2f}" fill="#9ecae1" stroke="#333"/>'
        )
        parts.append(
            f'<line class="median" x1="{x0:.2f}" y1="{y(s.median):.2f}" '
            f'x2="{x0 + box_w:.2f}" y2="{y(s.median):.2f}" stroke="#08306b" stroke-width="2"/>'
        )
        for out in s.outliers:
            parts.append(
                f'<circle class="outlier" cx="{cx:.2f}" cy="{y(out):.2f}" r="3" '
                f'fill="none" stroke="#d62728"/>'
            )
        parts.append(
            f'<text x="{cx:.2f}" y="{margin_t + plot_h + 20}" text-anchor="middle" font-size="12" '
            f'font-family="sans-serif">{label}</text>'
        )
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts)


def report(run_dir: str | Path) -> list[Path]:
    """Build summary.csv, report.md and per-metric box-plot SVGs from records.

    Returns the list of files written. Missing records are an error.
    """
    run_dir = Path(run_dir)
    records = read_records_jsonl(run_dir / "records.jsonl")
    summaries = summarize_records(records)
    written: list[Path] = []

    csv_path = run_dir / "summary.csv"
    write_summary_csv(csv_path, summaries)
    written.append(csv_path)

    md_path = run_dir / "report.md"
    md_path.write_text(markdown_table(summaries), encoding="utf-8")
    written.append(md_path)

    plots = run_dir / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    datasets = sorted({d for d, _, _ in summaries})
    for dataset_id in datasets:
        models = sorted({m for d, m, _ in summaries if d == dataset_id})
        for metric in METRIC_NAMES:
            labels = models
            stats = [summaries[(dataset_id, model, metric)] for model in models]
            svg = boxplot_svg(labels, stats, title=f"{dataset_id}: {metric}", y_label=metric)
            suffix = f"{dataset_id}-{metric}.svg" if len(datasets) > 1 else f"{metric}.svg"
            out = plots / suffix
            out.write_text(svg, encoding="utf-8")
            written.append(out)
    return written
