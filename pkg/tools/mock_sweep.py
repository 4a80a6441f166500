"""Brute-force separability sweep of the mock backend.

Scores every ground-truth crop of a grid of single-sprite scenes against its
own caption and against the same caption with another colour, scores empty
water, then runs the A/B/C suites over several seeds. Writes the results with
the frozen MockParams to tests/fixtures/mock_sweep.json.

    python3 tools/mock_sweep.py [--seeds 4] [--out tests/fixtures/mock_sweep.json]
"""

from __future__ import annotations

import argparse
import itertools
import json
from dataclasses import asdict
from pathlib import Path

from sasd import vocab
from sasd.embedding.base import similarity
from sasd.embedding.mock import MockBackend
from sasd.evaluation import TaskCase, lost_detections, run_suite
from sasd.raster import crop
from sasd.scenegen import MIN_BEAM, SceneSpec, SpriteSpec, caption_of, gen_scene, gen_suite

LENGTHS = range(12, 61, 4)
ASPECTS = (1.5, 2.0, 2.5, 3.0, 3.5, 4.0)
HEADINGS = (0, 45, 90)
TAUS = (0.8, 0.7, 0.5)


def crop_sweep(backend) -> dict:
    by_aspect = {}
    mismatch_max = 0.0
    n = 0
    for color, length, aspect, striped, heading in itertools.product(
        vocab.COLOR_NAMES, LENGTHS, ASPECTS, (False, True), HEADINGS
    ):
        if round(length / aspect) < MIN_BEAM:
            continue
        s = SpriteSpec(color, length, aspect, striped, heading)
        image, placed = gen_scene(SceneSpec(128, 128, 7, (s,)))
        vec = backend.embed_image(crop(image, placed[0][0]))
        score = similarity(backend.embed_text(caption_of(s)), vec)
        key = f"{aspect:g}"
        by_aspect[key] = min(by_aspect.get(key, 1.0), score)
        for other in vocab.COLOR_NAMES:
            if other != color:
                q = caption_of(s).text.replace(f" {color} ", f" {other} ")
                mismatch_max = max(mismatch_max, similarity(backend.embed_text(q), vec))
        n += 1
    empty = 0.0
    for seed in range(30):
        image, _ = gen_scene(SceneSpec(64, 64, seed))
        empty = max(empty, similarity(backend.embed_text("a red ship"), backend.embed_image(image)))
    return {
        "n_crops": n,
        "caption_min_by_aspect": {k: round(v, 4) for k, v in sorted(by_aspect.items())},
        "color_mismatch_max": round(mismatch_max, 4),
        "empty_water_max": round(empty, 4),
    }


def _rows(report):
    return {f"{r.task}@{r.tau:g}": [r.recall, r.precision] for r in report.rows}


def suite_sweep(backend, seeds: int, n_cases: int) -> dict:
    out = {}
    for kind in ("A", "B", "C"):
        for seed in range(seeds):
            cases = gen_suite(kind, n_cases, seed)
            tcs = [TaskCase(c.task_kind, c.image_ref, c.query, c.ground_truth) for c in cases]
            images = {c.image_ref: c.image for c in cases}
            report = run_suite(tcs, TAUS, backend, images=images)
            entry = {"rows": _rows(report)}
            if kind == "C":
                lost = [l for c in report.cases for l in lost_detections(c, 0.8, 0.5)]
                entry["lost_0.5"] = len(lost)
                entry["lost_in_multi_gt_roi"] = sum(
                    1 for l in lost if l["roi"] is not None and len(l["roi"]["gt_spanned"]) >= 2
                )
            out[f"{kind}/seed{seed}"] = entry
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=4)
    ap.add_argument("--cases", type=int, default=15)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests/fixtures/mock_sweep.json"))
    args = ap.parse_args()
    backend = MockBackend()
    doc = {
        "backend_id": backend.backend_id,
        "params": asdict(backend.params),
        "crop_grid": {
            "colors": list(vocab.COLOR_NAMES),
            "lengths": list(LENGTHS),
            "aspects": list(ASPECTS),
            "headings": list(HEADINGS),
            "min_beam": MIN_BEAM,
        },
        "crops": crop_sweep(backend),
        "suites": suite_sweep(backend, args.seeds, args.cases),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(doc["crops"], indent=2))


if __name__ == "__main__":
    main()
