"""Multi-scale sliding-window scoring of an image against a text query.

``scan`` scores every window of every configured scale. ``refine`` rescans a
region of interest at one scale with a finer stride. Both embed the query
once and return results in row-major window order no matter how many
workers evaluated them.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from sasd.embedding.base import EmbeddingBackend, EmbeddingVector, TextQuery, similarity
from sasd.errors import BackendError, GeometryError, RoiTooSmallError, SasdError
from sasd.raster import BBox, GridSpec, Raster, crop, window_grid

DEFAULT_WINDOWS = (64, 128, 256)


def _default_scales():
    return tuple(GridSpec.halved(w) for w in DEFAULT_WINDOWS)


@dataclass(frozen=True)
class ScanConfig:
    scales: tuple = field(default_factory=_default_scales)
    refine_stride_divisor: int = 4
    min_patch: int = 8

    def __post_init__(self):
        scales = tuple(s if isinstance(s, GridSpec) else GridSpec.halved(int(s)) for s in self.scales)
        if not scales:
            raise GeometryError("ScanConfig needs at least one scale")
        object.__setattr__(self, "scales", scales)
        if self.refine_stride_divisor < 2:
            raise GeometryError("refine_stride_divisor must be >= 2")
        if self.min_patch < 1:
            raise GeometryError("min_patch must be >= 1")

    @classmethod
    def from_windows(cls, windows, stride_fraction: float = 0.5, **kwargs) -> "ScanConfig":
        scales = tuple(GridSpec(int(w), max(1, int(w * stride_fraction))) for w in windows)
        return cls(scales=scales, **kwargs)

    def refine_scale(self, roi: BBox) -> GridSpec:
        """Scale whose window is closest to the ROI's shorter side (ties go to
        the smaller window), at stride window / refine_stride_divisor."""
        short = min(roi.width, roi.height)
        window = min(
            (s.window for s in self.scales),
            key=lambda w: (abs(w - short), w),
        )
        return GridSpec(window, max(1, window // self.refine_stride_divisor))


@dataclass(frozen=True)
class ScoreMap:
    scale: GridSpec
    entries: tuple  # ((BBox, score), ...) in row-major window order

    def __len__(self):
        return len(self.entries)

    @property
    def boxes(self) -> list[BBox]:
        return [b for b, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]


def _resolve_workers(backend: EmbeddingBackend, workers: int | None) -> int:
    if not getattr(backend, "concurrent_safe", False):
        return 1
    if workers is None:
        return 1
    if workers <= 0:
        return os.cpu_count() or 1
    return workers


def score_boxes(
    image: Raster,
    boxes: list[BBox],
    text_vec: EmbeddingVector,
    backend: EmbeddingBackend,
    workers: int | None = None,
) -> list[float]:
    """Similarity of each box's crop to ``text_vec``, in input order."""

    def one(box: BBox) -> float:
        try:
            return similarity(text_vec, backend.embed_image(crop(image, box)))
        except BackendError as exc:
            raise BackendError(f"{exc} (window {box.to_list()})", exc.diagnostics) from exc
        except SasdError:
            raise
        except Exception as exc:
            raise BackendError(
                f"backend {backend.backend_id} failed on window {box.to_list()}: {exc}", repr(exc)
            ) from exc

    n = _resolve_workers(backend, workers)
    if n == 1 or len(boxes) < 2:
        return [one(b) for b in boxes]
    with ThreadPoolExecutor(max_workers=n) as pool:
        # map preserves input order, so the result is order-independent
        return list(pool.map(one, boxes))


def _check_image(image: Raster, config: ScanConfig):
    if image.width < config.min_patch or image.height < config.min_patch:
        raise GeometryError(
            f"image {image.width}x{image.height} is smaller than min_patch {config.min_patch}"
        )


def scan(
    image: Raster,
    query,
    backend: EmbeddingBackend,
    config: ScanConfig | None = None,
    *,
    workers: int | None = None,
    text_vec: EmbeddingVector | None = None,
) -> list[ScoreMap]:
    """One ScoreMap per configured scale."""
    config = config or ScanConfig()
    _check_image(image, config)
    if text_vec is None:
        text_vec = backend.embed_text(TextQuery.coerce(query))
    maps = []
    for spec in config.scales:
        boxes = window_grid(image.width, image.height, spec)
        scores = score_boxes(image, boxes, text_vec, backend, workers)
        maps.append(ScoreMap(spec, tuple(zip(boxes, scores))))
    return maps


def refine_region(roi: BBox, image: Raster, config: ScanConfig) -> tuple[BBox, GridSpec]:
    """The clipped, margin-expanded region refine will scan, and its grid."""
    clipped = roi.clip(image.width, image.height)
    if clipped is None or min(clipped.width, clipped.height) < config.min_patch:
        raise RoiTooSmallError()
    spec = config.refine_scale(clipped)
    region = clipped.expand(spec.window // 2).clip(image.width, image.height)
    return region, spec


def refine(
    image: Raster,
    roi: BBox,
    query,
    backend: EmbeddingBackend,
    config: ScanConfig | None = None,
    *,
    workers: int | None = None,
    text_vec: EmbeddingVector | None = None,
) -> ScoreMap:
    """Rescan ``roi`` (plus half a window of margin) at a finer stride.

    Window boxes in the result are in full-image coordinates.
    """
    config = config or ScanConfig()
    region, spec = refine_region(roi, image, config)
    if text_vec is None:
        text_vec = backend.embed_text(TextQuery.coerce(query))
    local = window_grid(region.width, region.height, spec)
    boxes = [b.translate(region.x_min, region.y_min) for b in local]
    scores = score_boxes(image, boxes, text_vec, backend, workers)
    return ScoreMap(spec, tuple(zip(boxes, scores)))


def quantize(score: float) -> int:
    # round half up: 0.5 -> 128
    return int(np.floor(score * 255.0 + 0.5))


def score_heatmap(score_map: ScoreMap, image_dims: tuple[int, int]) -> Raster:
    """Single-channel raster; each pixel holds the max score of the windows
    covering it, quantised to 0..255. Uncovered pixels are 0."""
    width, height = image_dims
    heat = np.zeros((height, width), dtype=np.float64)
    for box, score in score_map.entries:
        b = box.clip(width, height)
        if b is None:
            continue
        view = heat[b.y_min:b.y_max, b.x_min:b.x_max]
        np.maximum(view, score, out=view)
    quant = np.floor(heat * 255.0 + 0.5).astype(np.uint8)
    return Raster(quant)


CSV_COLUMNS = ("scale_window", "x_min", "y_min", "x_max", "y_max", "score")


def write_score_csv(score_map: ScoreMap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for box, score in score_map.entries:
            writer.writerow([score_map.scale.window, *box.to_list(), f"{score:.6f}"])
