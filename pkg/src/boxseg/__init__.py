"""boxseg: box-prompted segmentation inference and evaluation engine."""

__version__ = "0.1.0"

from .dataset import BBox, DatasetManifest, ManifestEntry
from .metrics import MetricsQuad, SummaryStats, compute_quad, summarize

__all__ = [
    "__version__",
    "BBox",
    "DatasetManifest",
    "ManifestEntry",
    "MetricsQuad",
    "SummaryStats",
    "compute_quad",
    "summarize",
]
