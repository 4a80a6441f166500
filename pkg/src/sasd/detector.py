"""Thresholding, ROI merging, refinement and peak extraction.

Pipeline for one image::

    scan -> threshold_candidates -> merge_rois -> refine each ROI
         -> greedy peaks inside the ROI -> fit a box around each peak

Merging is connected-component union, not score-ordered NMS. At a low
threshold the windows between two neighbouring targets pass too, the two
clusters join into one ROI, and the ROI's peak extraction then keeps a single
peak. That is the recall loss on crowded scenes and it is intentional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from sasd.embedding.base import EmbeddingBackend, EmbeddingVector, TextQuery
from sasd.errors import GeometryError
from sasd.raster import BBox, Raster, iou
from sasd.scanner import ScanConfig, ScoreMap, refine, scan, score_boxes


@dataclass(frozen=True)
class DetectorConfig:
    tau: float = 0.8
    merge_iou: float = 0.30
    # None means half the refine window
    peak_min_separation: float | None = None
    fit_boxes: bool = True
    # a window covering this share of an accepted box sees the same object
    support_overlap: float = 0.5
    # a fitted box this close to an accepted one is the same detection
    duplicate_iou: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise GeometryError(f"invalid threshold {self.tau}: tau must lie in [0, 1]")
        if not 0.0 < self.merge_iou < 1.0:
            raise GeometryError(f"merge_iou must lie in (0, 1), got {self.merge_iou}")
        if self.peak_min_separation is not None and self.peak_min_separation < 0:
            raise GeometryError("peak_min_separation must be non-negative")


@dataclass(frozen=True)
class ROI:
    box: BBox
    member_count: int
    peak_score: float
    members: tuple = ()


@dataclass(frozen=True)
class Detection:
    box: BBox
    confidence: float
    roi_id: int

    def to_dict(self) -> dict:
        return {"box": self.box.to_list(), "confidence": self.confidence, "roi_id": self.roi_id}


@dataclass
class DetectionRun:
    """Everything ``detect`` computed, kept for diagnostics."""

    maps: list
    candidates: list
    rois: list
    refine_maps: list
    detections: list = field(default_factory=list)


def threshold_candidates(maps: list[ScoreMap], tau: float) -> list[tuple[BBox, float]]:
    """Entries scoring >= tau, ordered by scale index then window order."""
    return [(box, score) for m in maps for box, score in m.entries if score >= tau]


def _related(a: BBox, b: BBox, merge_iou: float) -> bool:
    return iou(a, b) >= merge_iou or a.contains(b) or b.contains(a)


def _components(boxes: list[BBox], merge_iou: float) -> list[list[int]]:
    parent = list(range(len(boxes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if _related(boxes[i], boxes[j], merge_iou):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(len(boxes)):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def merge_rois(candidates: list[tuple[BBox, float]], merge_iou: float = 0.30) -> list[ROI]:
    """Group candidates into ROIs by transitive overlap/containment.

    Component boxes are merged again until no two ROI boxes are related, so
    the output is a fixed point of the merge.
    """
    groups = [[i] for i in range(len(candidates))]
    boxes = [b for b, _ in candidates]
    while True:
        comps = _components(boxes, merge_iou)
        if len(comps) == len(boxes) and len(boxes) == len(groups) and all(len(c) == 1 for c in comps):
            break
        new_groups, new_boxes = [], []
        for comp in comps:
            members = sorted(i for c in comp for i in groups[c])
            box = boxes[comp[0]]
            for c in comp[1:]:
                box = box.union(boxes[c])
            new_groups.append(members)
            new_boxes.append(box)
        groups, boxes = new_groups, new_boxes
    rois = []
    for members, box in zip(groups, boxes):
        rois.append(ROI(
            box=box,
            member_count=len(members),
            peak_score=max(candidates[i][1] for i in members),
            members=tuple(candidates[i][0] for i in members),
        ))
    return rois


def _moves(box: BBox, step: int, limit: BBox, min_side: int):
    """Candidate boxes one edge-move away: shrink each edge, then grow it."""
    x0, y0, x1, y1 = box.x_min, box.y_min, box.x_max, box.y_max
    for dx0, dy0, dx1, dy1 in ((step, 0, 0, 0), (0, 0, -step, 0), (0, step, 0, 0), (0, 0, 0, -step)):
        nb = (x0 + dx0, y0 + dy0, x1 + dx1, y1 + dy1)
        if nb[2] - nb[0] >= min_side and nb[3] - nb[1] >= min_side:
            yield BBox(*nb)
    for dx0, dy0, dx1, dy1 in ((-step, 0, 0, 0), (0, 0, step, 0), (0, -step, 0, 0), (0, 0, 0, step)):
        nb = BBox(x0 + dx0, y0 + dy0, x1 + dx1, y1 + dy1)
        if limit.contains(nb):
            yield nb


def fit_box(
    image: Raster,
    start: BBox,
    start_score: float,
    text_vec: EmbeddingVector,
    backend: EmbeddingBackend,
    limit: BBox,
    min_side: int = 8,
) -> tuple[BBox, float]:
    """Coordinate ascent on the query score over box edges.

    Starting from a peak window, edges move in and out in halving steps and
    a move is kept only if it strictly raises the score. Trimming empty
    surroundings raises agreement; cutting into the target lowers it, so the
    ascent settles near the target's extent.
    """
    box, best = start, start_score
    step = 1
    while step * 2 <= max(start.width, start.height) // 4:
        step *= 2
    seen = {box}
    while step >= 1:
        improved = True
        while improved:
            improved = False
            cands = [b for b in _moves(box, step, limit, min_side) if b not in seen]
            if not cands:
                break
            seen.update(cands)
            scores = score_boxes(image, cands, text_vec, backend)
            top = max(range(len(cands)), key=lambda i: (scores[i], -i))
            if scores[top] > best:
                box, best = cands[top], scores[top]
                improved = True
        step //= 2
    return box, best


def extract_peaks(
    image: Raster,
    roi: ROI,
    roi_id: int,
    rmap: ScoreMap,
    text_vec: EmbeddingVector,
    backend: EmbeddingBackend,
    config: DetectorConfig,
    min_side: int = 8,
    accepted: list[Detection] | None = None,
) -> list[Detection]:
    """Greedy peaks among refine windows (centre inside the ROI, score >= tau).

    After each accepted peak, windows whose centre lies within
    ``peak_min_separation`` of it, or which cover ``support_overlap`` of the
    fitted box, are suppressed. A fitted box that duplicates one in
    ``accepted`` (or an earlier one from this ROI) is dropped.
    """
    sep = config.peak_min_separation
    if sep is None:
        sep = rmap.scale.window / 2.0
    pool = [
        (i, box, score)
        for i, (box, score) in enumerate(rmap.entries)
        if score >= config.tau and roi.box.contains_point(*box.center)
    ]
    # ties broken by row-major window order
    pool.sort(key=lambda e: (-e[2], e[0]))
    limit = BBox(0, 0, image.width, image.height)
    accepted = list(accepted or [])
    detections = []
    while pool:
        _, peak_box, peak_score = pool.pop(0)
        if config.fit_boxes:
            box, conf = fit_box(image, peak_box, peak_score, text_vec, backend, limit, min_side)
        else:
            box, conf = peak_box, peak_score
        if not any(iou(box, d.box) >= config.duplicate_iou for d in accepted):
            det = Detection(box, conf, roi_id)
            detections.append(det)
            accepted.append(det)
        cx, cy = peak_box.center
        keep = []
        for entry in pool:
            ex, ey = entry[1].center
            if math.hypot(ex - cx, ey - cy) <= sep:
                continue
            inter = entry[1].intersect(box)
            if inter is not None and inter.area >= config.support_overlap * box.area:
                continue
            keep.append(entry)
        pool = keep
    return detections


def detect_run(
    image: Raster,
    query,
    backend: EmbeddingBackend,
    scan_config: ScanConfig | None = None,
    det_config: DetectorConfig | None = None,
    *,
    workers: int | None = None,
) -> DetectionRun:
    scan_config = scan_config or ScanConfig()
    det_config = det_config or DetectorConfig()
    text_vec = backend.embed_text(TextQuery.coerce(query))
    maps = scan(image, query, backend, scan_config, workers=workers, text_vec=text_vec)
    candidates = threshold_candidates(maps, det_config.tau)
    rois = merge_rois(candidates, det_config.merge_iou)
    run = DetectionRun(maps=maps, candidates=candidates, rois=rois, refine_maps=[])
    for roi_id, roi in enumerate(rois):
        rmap = refine(image, roi.box, query, backend, scan_config, workers=workers, text_vec=text_vec)
        run.refine_maps.append(rmap)
        run.detections.extend(
            extract_peaks(
                image, roi, roi_id, rmap, text_vec, backend, det_config,
                scan_config.min_patch, run.detections,
            )
        )
    return run


def detect(
    image: Raster,
    query,
    backend: EmbeddingBackend,
    scan_config: ScanConfig | None = None,
    det_config: DetectorConfig | None = None,
    *,
    workers: int | None = None,
) -> list[Detection]:
    return detect_run(image, query, backend, scan_config, det_config, workers=workers).detections
