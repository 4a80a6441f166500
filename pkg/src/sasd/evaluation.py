"""Task suites, detection matching, and recall/precision reports.

A suite is a JSON Lines manifest, one case per line::

    {"task": "A", "image": "images/case_000.png", "query": "a red ship",
     "gt": [{"box": [x_min, y_min, x_max, y_max], "match": true}]}

``gt`` may be omitted (caption-only record); such cases load fine but are
excluded from scoring with a warning. Image paths are relative to the
manifest's directory unless absolute.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from sasd.detector import Detection, DetectorConfig, detect_run
from sasd.embedding.base import EmbeddingBackend, TextQuery
from sasd.errors import EvaluationError, ManifestError, SasdError
from sasd.raster import BBox, iou, read_image
from sasd.scanner import ScanConfig

log = logging.getLogger(__name__)

TASK_KINDS = ("A", "B", "C")
DEFAULT_TAUS = (0.8, 0.7, 0.5)
IOU_THRESHOLD = 0.5
UNDEFINED = "undefined"


@dataclass(frozen=True)
class TaskCase:
    task_kind: str
    image_ref: str
    query: TextQuery
    # ((BBox, is_match), ...) or None for a caption-only record
    ground_truth: tuple | None = None

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task must be one of {TASK_KINDS}, got {self.task_kind!r}")
        object.__setattr__(self, "query", TextQuery.coerce(self.query))
        if self.ground_truth is None:
            return
        gt = tuple((b, bool(m)) for b, m in self.ground_truth)
        object.__setattr__(self, "ground_truth", gt)
        if self.task_kind in ("A", "C") and not gt:
            raise ValueError(f"task {self.task_kind} case needs at least one ground-truth box")
        if self.task_kind in ("B", "C") and all(m for _, m in gt):
            raise ValueError(f"task {self.task_kind} case needs at least one non-matching object")
        if not any(m for _, m in gt):
            raise ValueError("case has no matching ground truth, recall is undefined")

    @property
    def n_matching(self) -> int:
        return sum(1 for _, m in self.ground_truth or () if m)

    def to_record(self) -> dict:
        rec = {"task": self.task_kind, "image": self.image_ref, "query": self.query.text}
        if self.ground_truth is not None:
            rec["gt"] = [{"box": b.to_list(), "match": m} for b, m in self.ground_truth]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TaskCase":
        if not isinstance(rec, dict):
            raise ValueError("record must be a JSON object")
        missing = [k for k in ("task", "image", "query") if k not in rec]
        if missing:
            raise ValueError(f"missing field(s): {', '.join(missing)}")
        gt = None
        if "gt" in rec:
            if not isinstance(rec["gt"], list):
                raise ValueError("gt must be a list")
            gt = []
            for item in rec["gt"]:
                if not isinstance(item, dict) or "box" not in item or "match" not in item:
                    raise ValueError("gt entries need 'box' and 'match'")
                if not isinstance(item["match"], bool):
                    raise ValueError("gt 'match' must be true or false")
                gt.append((BBox.from_list(item["box"]), item["match"]))
        return cls(rec["task"], rec["image"], rec["query"], gt)


def dump_manifest(cases: list[TaskCase]) -> str:
    return "".join(json.dumps(c.to_record(), sort_keys=True) + "\n" for c in cases)


def write_manifest(cases: list[TaskCase], path) -> None:
    Path(path).write_text(dump_manifest(cases), encoding="utf-8")


def read_manifest(path) -> list[TaskCase]:
    """Parse a suite manifest. Errors name the offending 1-based line."""
    cases = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", lineno) from exc
            try:
                cases.append(TaskCase.from_record(rec))
            except (ValueError, TypeError, SasdError) as exc:
                raise ManifestError(str(exc), lineno) from exc
    return cases


def resolve_image(case: TaskCase, base_dir) -> Path:
    p = Path(case.image_ref)
    return p if p.is_absolute() else Path(base_dir) / p


# -- matching -------------------------------------------------------------

def _row_major(box: BBox):
    return (box.y_min, box.x_min, box.y_max, box.x_max)


def match_detections(
    dets: list[Detection],
    gts: list[tuple[BBox, bool]],
    iou_thresh: float = IOU_THRESHOLD,
) -> tuple[int, int, int]:
    """Greedy one-to-one matching, highest confidence first.

    Each detection takes the unmatched GT it overlaps most (iou >= thresh).
    Taking a matching GT is a tp; hitting a non-matching GT or nothing is a
    fp. Matching GTs left over are fn.
    """
    order = sorted(dets, key=lambda d: (-d.confidence, _row_major(d.box)))
    # GT order must not matter, so ties in iou go to the row-major-first box
    gt_order = sorted(range(len(gts)), key=lambda i: (_row_major(gts[i][0]), not gts[i][1]))
    used = set()
    tp = fp = 0
    for det in order:
        best, best_iou = None, iou_thresh
        for i in gt_order:
            if i in used:
                continue
            v = iou(det.box, gts[i][0])
            if v > best_iou or (best is None and v >= best_iou):
                best, best_iou = i, v
        if best is None:
            fp += 1
        elif gts[best][1]:
            tp += 1
            used.add(best)
        else:
            fp += 1
    fn = sum(1 for i, (_, m) in enumerate(gts) if m and i not in used)
    return tp, fp, fn


def _percent(num: int, den: int) -> float:
    q = (Decimal(100 * num) / Decimal(den)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return float(q)


def recall_precision(tp: int, fp: int, fn: int) -> tuple[float, float | None]:
    """Percentages rounded half-up to 2 decimals; precision is None
    (undefined) when nothing was detected."""
    if min(tp, fp, fn) < 0:
        raise EvaluationError("counts must be non-negative")
    if tp + fn == 0:
        raise EvaluationError("no matching ground truth: recall is undefined")
    precision = None if tp + fp == 0 else _percent(tp, tp + fp)
    return _percent(tp, tp + fn), precision


# -- running suites -------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    task: str
    tau: float
    recall: float | None
    precision: float | None
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "tau": self.tau,
            "recall": self.recall,
            "precision": UNDEFINED if self.precision is None else self.precision,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportRow":
        prec = d.get("precision")
        return cls(
            task=d["task"],
            tau=float(d["tau"]),
            recall=d.get("recall"),
            precision=None if prec in (None, UNDEFINED) else float(prec),
            tp=d.get("tp"),
            fp=d.get("fp"),
            fn=d.get("fn"),
        )


@dataclass
class EvalReport:
    model: str
    taus: tuple
    rows: list = field(default_factory=list)
    cases: list = field(default_factory=list)
    excluded: list = field(default_factory=list)

    def row(self, task: str, tau: float) -> ReportRow | None:
        for r in self.rows:
            if r.task == task and r.tau == tau:
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "taus": list(self.taus),
            "rows": [r.to_dict() for r in self.rows],
            "cases": self.cases,
            "excluded": self.excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            model=d["model"],
            taus=tuple(float(t) for t in d["taus"]),
            rows=[ReportRow.from_dict(r) for r in d["rows"]],
            cases=d.get("cases", []),
            excluded=d.get("excluded", []),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def _found(dets, gts, iou_thresh):
    """Indices of matching GTs hit by some detection at iou_thresh."""
    return [
        i for i, (b, m) in enumerate(gts)
        if m and any(iou(d.box, b) >= iou_thresh for d in dets)
    ]


def case_diagnostics(run, gts, iou_thresh: float = IOU_THRESHOLD) -> dict:
    """ROI-level view of one detect run: which GT ships each ROI spans."""
    rois = []
    for roi_id, roi in enumerate(run.rois):
        spans = [i for i, (b, _) in enumerate(gts) if roi.box.contains_point(*b.center)]
        rois.append({
            "roi_id": roi_id,
            "box": roi.box.to_list(),
            "member_count": roi.member_count,
            "peak_score": round(roi.peak_score, 6),
            "gt_spanned": spans,
            "detections": sum(1 for d in run.detections if d.roi_id == roi_id),
        })
    return {
        "n_candidates": len(run.candidates),
        "rois": rois,
        "found": _found(run.detections, gts, iou_thresh),
        "detections": [
            {"box": d.box.to_list(), "confidence": round(d.confidence, 6), "roi_id": d.roi_id}
            for d in run.detections
        ],
    }


def run_case(
    case: TaskCase,
    image,
    taus,
    backend: EmbeddingBackend,
    scan_config: ScanConfig,
    det_config: DetectorConfig,
    iou_thresh: float = IOU_THRESHOLD,
    workers: int | None = None,
) -> dict:
    gts = list(case.ground_truth)
    per_tau = {}
    for tau in taus:
        cfg = replace(det_config, tau=tau)
        run = detect_run(image, case.query, backend, scan_config, cfg, workers=workers)
        tp, fp, fn = match_detections(run.detections, gts, iou_thresh)
        diag = case_diagnostics(run, gts, iou_thresh)
        diag.update({"tp": tp, "fp": fp, "fn": fn})
        per_tau[_tau_key(tau)] = diag
    return per_tau


def _tau_key(tau: float) -> str:
    return f"{tau:g}"


def lost_detections(case_entry: dict, tau_high: float, tau_low: float) -> list[dict]:
    """GT ships found at tau_high but not at tau_low, each with the low-tau
    ROI that contains it (None when no ROI does)."""
    hi = case_entry["taus"][_tau_key(tau_high)]
    lo = case_entry["taus"][_tau_key(tau_low)]
    out = []
    for i in sorted(set(hi["found"]) - set(lo["found"])):
        roi = next((r for r in lo["rois"] if i in r["gt_spanned"]), None)
        out.append({"gt": i, "roi": roi})
    return out


def run_suite(
    cases: list[TaskCase],
    taus=DEFAULT_TAUS,
    backend: EmbeddingBackend | None = None,
    scan_config: ScanConfig | None = None,
    det_config: DetectorConfig | None = None,
    *,
    base_dir=".",
    images: dict | None = None,
    model: str | None = None,
    iou_thresh: float = IOU_THRESHOLD,
    workers: int | None = None,
) -> EvalReport:
    """Detect on every case at every tau and aggregate counts per (task, tau).

    ``images`` may map image_ref to an already loaded Raster. Cases that
    fail (unreadable image, backend error, no ground truth) are listed in
    ``report.excluded`` and logged, never dropped silently.
    """
    if not cases:
        raise EvaluationError("no cases")
    if backend is None:
        raise EvaluationError("run_suite needs a backend")
    scan_config = scan_config or ScanConfig()
    det_config = det_config or DetectorConfig()
    taus = tuple(float(t) for t in taus)
    for t in taus:
        if not 0.0 <= t <= 1.0:
            raise EvaluationError(f"invalid threshold {t}")
    images = images or {}

    n_workers = workers if workers and workers > 0 else 1
    if not getattr(backend, "concurrent_safe", False):
        n_workers = 1

    def one(idx_case):
        idx, case = idx_case
        if case.ground_truth is None:
            return idx, None, "no ground truth"
        try:
            image = images.get(case.image_ref)
            if image is None:
                image = read_image(resolve_image(case, base_dir))
            per_tau = run_case(case, image, taus, backend, scan_config, det_config, iou_thresh)
        except (SasdError, OSError) as exc:
            return idx, None, f"{type(exc).__name__}: {exc}"
        return idx, per_tau, None

    indexed = list(enumerate(cases))
    if n_workers == 1:
        results = [one(ic) for ic in indexed]
    else:
        # cases run in parallel; windows inside a case stay serial
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(one, indexed))

    report = EvalReport(model=model or backend.backend_id, taus=taus)
    totals = {}
    for idx, per_tau, err in results:
        case = cases[idx]
        if err is not None:
            log.warning("case %d (%s) excluded: %s", idx, case.image_ref, err)
            report.excluded.append({"case": idx, "image": case.image_ref, "reason": err})
            continue
        report.cases.append({
            "case": idx,
            "task": case.task_kind,
            "image": case.image_ref,
            "query": case.query.text,
            "n_matching": case.n_matching,
            "taus": per_tau,
        })
        for tau in taus:
            d = per_tau[_tau_key(tau)]
            acc = totals.setdefault((case.task_kind, tau), [0, 0, 0])
            acc[0] += d["tp"]
            acc[1] += d["fp"]
            acc[2] += d["fn"]

    for task in TASK_KINDS:
        for tau in taus:
            if (task, tau) not in totals:
                continue
            tp, fp, fn = totals[(task, tau)]
            rec, prec = recall_precision(tp, fp, fn)
            report.rows.append(ReportRow(task, tau, rec, prec, tp, fp, fn))
    return report


# -- table rendering ------------------------------------------------------

DASH = "—"


def _cell(v: float | None) -> str:
    return DASH if v is None else f"{v:.2f}"


def render_table(reports: list[EvalReport]) -> str:
    """Text table with one section per threshold, one row per model and a
    Recall/Precision column pair per task."""
    if not reports:
        raise EvaluationError("no reports to render")
    tasks = [t for t in TASK_KINDS if any(r.task == t for rep in reports for r in rep.rows)]
    taus = []
    for rep in reports:
        for t in rep.taus:
            if t not in taus:
                taus.append(t)
    name_w = max(len("Model"), *(len(rep.model) for rep in reports))
    header = ["Model".ljust(name_w)]
    for t in tasks:
        header += [f"Task {t} Recall", f"Task {t} Precision"]
    lines = [" | ".join(header)]
    for tau in taus:
        lines.append(f"Threshold {tau:g}")
        for rep in reports:
            cells = [rep.model.ljust(name_w)]
            for t in tasks:
                row = rep.row(t, tau)
                cells += [_cell(row.recall if row else None), _cell(row.precision if row else None)]
            lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"


def table_json(reports: list[EvalReport]) -> str:
    """Machine-readable twin of :func:`render_table`."""
    out = {"models": [rep.model for rep in reports], "sections": []}
    taus = []
    for rep in reports:
        for t in rep.taus:
            if t not in taus:
                taus.append(t)
    for tau in taus:
        section = {"threshold": tau, "rows": []}
        for rep in reports:
            cells = {}
            for r in rep.rows:
                if r.tau == tau:
                    cells[r.task] = {
                        "recall": r.recall,
                        "precision": UNDEFINED if r.precision is None else r.precision,
                    }
            section["rows"].append({"model": rep.model, "tasks": cells})
        out["sections"].append(section)
    return json.dumps(out, indent=2, sort_keys=True) + "\n"


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return workers
