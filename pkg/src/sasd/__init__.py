"""Semantic-aware ship detection by sliding-window image-text similarity.

The pipeline scores multi-scale windows of an image against a free-text
query with a joint text/image embedding backend, thresholds and merges the
hits into regions of interest, refines each region at a finer stride and
reports one box per surviving peak.
"""

from sasd.detector import Detection, DetectorConfig, ROI, detect, detect_run
from sasd.embedding import EmbeddingBackend, MockBackend, TextQuery, make_backend, similarity
from sasd.raster import BBox, GridSpec, Raster, crop, iou, read_image, window_grid, write_png
from sasd.evaluation import EvalReport, TaskCase, match_detections, render_table, run_suite
from sasd.scanner import ScanConfig, ScoreMap, refine, scan
from sasd.scenegen import SceneSpec, SpriteSpec, caption_of, gen_scene, gen_suite

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Detection",
    "DetectorConfig",
    "EmbeddingBackend",
    "EvalReport",
    "GridSpec",
    "MockBackend",
    "ROI",
    "Raster",
    "ScanConfig",
    "SceneSpec",
    "ScoreMap",
    "SpriteSpec",
    "TaskCase",
    "TextQuery",
    "caption_of",
    "crop",
    "detect",
    "detect_run",
    "gen_scene",
    "gen_suite",
    "iou",
    "make_backend",
    "match_detections",
    "read_image",
    "refine",
    "render_table",
    "run_suite",
    "scan",
    "similarity",
    "window_grid",
    "write_png",
]
