"""Command-line entry point: ``sasd scan|detect|gen|eval|report``.

Settings resolve as flag > ``SASD_BACKEND`` (backend only) > ``--config``
file > default. Every command writes the resolved settings to
``config.toml`` in its output directory; passing that file back through
``--config`` reproduces the run.

Exit codes: 0 success, 2 usage or input error, 3 backend failure, 4 bad
data (manifest or report files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from sasd.detector import DetectorConfig, detect
from sasd.embedding import BACKENDS, make_backend
from sasd.errors import BackendError, ConfigError, ManifestError, SasdError
from sasd.evaluation import (
    DEFAULT_TAUS,
    IOU_THRESHOLD,
    EvalReport,
    read_manifest,
    render_table,
    resolve_workers,
    run_suite,
    table_json,
)
from sasd.raster import draw_rectangle, read_image, write_png
from sasd.scanner import DEFAULT_WINDOWS, ScanConfig, scan, score_heatmap, write_score_csv
from sasd.scenegen import gen_suite

log = logging.getLogger("sasd")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_DATA = 4

ENV_BACKEND = "SASD_BACKEND"
SNAPSHOT = "config.toml"

# config file layout: table name -> RunConfig fields it holds ("" = top level)
SECTIONS = {
    "": ("backend", "seed", "workers", "tau", "cache_size"),
    "backend_options": ("backend_options",),
    "scan": ("windows", "stride_fraction", "refine_stride_divisor", "min_patch"),
    "detect": ("merge_iou", "peak_min_separation", "fit_boxes", "support_overlap", "duplicate_iou"),
    "eval": ("taus", "iou_threshold", "model"),
}


@dataclass
class RunConfig:
    backend: str = "mock"
    backend_options: dict = field(default_factory=dict)
    cache_size: int = 0
    seed: int = 0
    workers: int = 0  # 0 = all cores
    tau: float = 0.8
    windows: list = field(default_factory=lambda: list(DEFAULT_WINDOWS))
    stride_fraction: float = 0.5
    refine_stride_divisor: int = 4
    min_patch: int = 8
    merge_iou: float = 0.30
    peak_min_separation: float | None = None
    fit_boxes: bool = True
    support_overlap: float = 0.5
    duplicate_iou: float = 0.5
    taus: list = field(default_factory=lambda: list(DEFAULT_TAUS))
    iou_threshold: float = IOU_THRESHOLD
    model: str | None = None

    def scan_config(self) -> ScanConfig:
        return ScanConfig.from_windows(
            self.windows,
            self.stride_fraction,
            refine_stride_divisor=self.refine_stride_divisor,
            min_patch=self.min_patch,
        )

    def det_config(self) -> DetectorConfig:
        return DetectorConfig(
            tau=self.tau,
            merge_iou=self.merge_iou,
            peak_min_separation=self.peak_min_separation,
            fit_boxes=self.fit_boxes,
            support_overlap=self.support_overlap,
            duplicate_iou=self.duplicate_iou,
        )

    def validate(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; expected one of {', '.join(BACKENDS)}")
        if not self.windows or any(int(w) < 1 for w in self.windows):
            raise ConfigError("windows must be a non-empty list of positive sizes")
        if not 0.0 < self.stride_fraction <= 1.0:
            raise ConfigError("stride_fraction must lie in (0, 1]")
        if self.cache_size < 0:
            raise ConfigError("cache_size must be >= 0")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError("iou_threshold must lie in (0, 1]")
        for t in self.taus:
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"invalid threshold {t}: tau must lie in [0, 1]")
        if not self.taus:
            raise ConfigError("taus must not be empty")
        self.scan_config()
        self.det_config()

    def to_toml(self, run: dict | None = None) -> str:
        values = asdict(self)
        doc = {}
        for section, keys in SECTIONS.items():
            if section == "backend_options":
                doc[section] = dict(values["backend_options"])
                continue
            table = {k: values[k] for k in keys if values[k] is not None}
            if section:
                doc[section] = table
            else:
                doc.update(table)
        if run:
            doc["run"] = run
        return tomli_w.dumps(doc)


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def _flatten_file(doc: dict) -> dict:
    flat = {}
    for key, value in doc.items():
        if key == "run":
            # provenance block of a snapshot; informational only
            continue
        if key == "backend_options":
            if not isinstance(value, dict):
                raise ConfigError("backend_options must be a table")
            flat["backend_options"] = dict(value)
        elif key in SECTIONS and isinstance(value, dict):
            for k, v in value.items():
                if k not in SECTIONS[key]:
                    raise ConfigError(f"unknown config key {key}.{k}")
                flat[k] = v
        elif key in SECTIONS[""]:
            flat[key] = value
        else:
            raise ConfigError(f"unknown config key {key}")
    return flat


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return _flatten_file(tomllib.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _coerce(name: str, value):
    default = _FIELD_TYPES[name].default
    try:
        if name in ("windows",):
            return [int(v) for v in value]
        if name == "taus":
            return [float(v) for v in value]
        if name in ("backend_options",):
            return dict(value)
        if name in ("backend",):
            return str(value)
        if name == "model":
            return None if value is None else str(value)
        if name == "peak_min_separation":
            return None if value is None else float(value)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true or false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or int(value) != value:
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r} ({exc})") from exc
    return value


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    """Merge defaults, config file, environment and flags, then validate."""
    environ = os.environ if environ is None else environ
    merged = {}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    if environ.get(ENV_BACKEND):
        merged["backend"] = environ[ENV_BACKEND]
    for name in ("backend", "seed", "workers", "tau"):
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    cfg.workers = resolve_workers(cfg.workers)
    cfg.validate()
    return cfg


def _backend(cfg: RunConfig):
    return make_backend(cfg.backend, cfg.backend_options, cfg.cache_size)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(cfg: RunConfig, out: Path, run: dict):
    (out / SNAPSHOT).write_text(cfg.to_toml(run), encoding="utf-8")


def _read_input(path):
    try:
        return read_image(path)
    except OSError as exc:
        raise ConfigError(f"cannot read image {path}: {exc}") from exc


# -- commands -------------------------------------------------------------

def cmd_scan(args, cfg: RunConfig) -> int:
    image = _read_input(args.image)
    out = _out_dir(args.out)
    backend = _backend(cfg)
    maps = scan(image, args.query, backend, cfg.scan_config(), workers=cfg.workers)
    for m in maps:
        w = m.scale.window
        write_score_csv(m, out / f"scores_{w}.csv")
        write_png(score_heatmap(m, (image.width, image.height)), out / f"heatmap_{w}.png")
    _snapshot(cfg, out, {"command": "scan", "image": str(args.image), "query": args.query})
    print(f"wrote {len(maps)} score maps to {out}")
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig) -> int:
    image = _read_input(args.image)
    out = _out_dir(args.out)
    backend = _backend(cfg)
    dets = detect(image, args.query, backend, cfg.scan_config(), cfg.det_config(), workers=cfg.workers)
    payload = json.dumps([d.to_dict() for d in dets], indent=2) + "\n"
    (out / "detections.json").write_text(payload, encoding="utf-8")
    if not args.no_annotate:
        annotated = image
        for d in dets:
            annotated = draw_rectangle(annotated, d.box)
        write_png(annotated, out / "annotated.png")
    _snapshot(cfg, out, {
        "command": "detect",
        "image": str(args.image),
        "query": args.query,
        "annotate": not args.no_annotate,
    })
    print(f"{len(dets)} detection(s) written to {out / 'detections.json'}")
    return EXIT_OK


def cmd_gen(args, cfg: RunConfig) -> int:
    seed = cfg.seed if args.gen_seed is None else args.gen_seed
    if args.n < 1:
        raise ConfigError("N must be >= 1")
    out = _out_dir(args.out)
    cases = gen_suite(args.kind, args.n, seed, out_dir=out)
    cfg.seed = seed
    _snapshot(cfg, out, {"command": "gen", "kind": args.kind, "n": args.n})
    print(f"wrote {len(cases)} {args.kind} cases to {out / 'suite.jsonl'}")
    return EXIT_OK


def _manifest_path(suite) -> Path:
    p = Path(suite)
    return p / "suite.jsonl" if p.is_dir() else p


def cmd_eval(args, cfg: RunConfig) -> int:
    manifest = _manifest_path(args.suite)
    try:
        cases = read_manifest(manifest)
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {manifest}: {exc.strerror or exc}") from exc
    out = _out_dir(args.out)
    backend = _backend(cfg)
    if cases:
        # surface a dead backend as such rather than as N excluded cases
        backend.embed_text(cases[0].query)
    model = args.model or cfg.model
    report = run_suite(
        cases,
        cfg.taus,
        backend,
        cfg.scan_config(),
        cfg.det_config(),
        base_dir=manifest.parent,
        model=model,
        iou_thresh=cfg.iou_threshold,
        workers=cfg.workers,
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    table = render_table([report])
    (out / "table.txt").write_text(table, encoding="utf-8")
    (out / "table.json").write_text(table_json([report]), encoding="utf-8")
    _snapshot(cfg, out, {"command": "eval", "suite": str(manifest)})
    for ex in report.excluded:
        print(f"excluded case {ex['case']} ({ex['image']}): {ex['reason']}", file=sys.stderr)
    sys.stdout.write(table)
    if any(ex["reason"].startswith("BackendError") for ex in report.excluded):
        return EXIT_BACKEND
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    reports = []
    for path in args.reports:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read report {path}: {exc.strerror or exc}") from exc
        try:
            reports.append(EvalReport.from_json(text))
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: malformed report ({exc})") from exc
    table = render_table(reports)
    out = _out_dir(args.out)
    (out / "table.txt").write_text(table, encoding="utf-8")
    (out / "table.json").write_text(table_json(reports), encoding="utf-8")
    _snapshot(cfg, out, {"command": "report", "reports": [str(p) for p in args.reports]})
    sys.stdout.write(table)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser):
    # SUPPRESS so a flag given before the subcommand survives the subparser
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="TOML config file")
    g.add_argument("--backend", default=argparse.SUPPRESS, help="mock | model-file | remote")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    g.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="parallel workers (0 = all cores)")
    g.add_argument("--tau", type=float, default=argparse.SUPPRESS, help="detection threshold in [0, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sasd", description="Text-queried ship detection.")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="write per-scale score CSVs and heatmaps")
    p.add_argument("image")
    p.add_argument("query")
    p.add_argument("--out", default="scan_out")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("detect", help="detect objects matching a text query")
    p.add_argument("image")
    p.add_argument("query")
    p.add_argument("--out", default="detect_out")
    p.add_argument("--no-annotate", action="store_true", help="skip the annotated PNG")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("gen", help="generate a synthetic task suite")
    p.add_argument("kind", choices=("A", "B", "C"))
    p.add_argument("n", type=int)
    p.add_argument("gen_seed", nargs="?", type=int, default=None, metavar="SEED")
    p.add_argument("--out", default="suite")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("eval", help="evaluate a suite at every threshold")
    p.add_argument("suite", help="suite.jsonl or the directory holding it")
    p.add_argument("--out", default="eval_out")
    p.add_argument("--model", default=None, help="model name for the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render evaluation reports as a table")
    p.add_argument("reports", nargs="+", metavar="EVAL_JSON")
    p.add_argument("--out", default="report_out")
    p.set_defaults(func=cmd_report)

    for p in sub.choices.values():
        _global_flags(p)
    return parser


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args, environ)
        return args.func(args, cfg)
    except BackendError as exc:
        detail = f" ({exc.diagnostics})" if getattr(exc, "diagnostics", None) else ""
        print(f"sasd: backend error: {exc}{detail}", file=sys.stderr)
        return EXIT_BACKEND
    except ManifestError as exc:
        print(f"sasd: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SasdError, ValueError, OSError) as exc:
        print(f"sasd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
