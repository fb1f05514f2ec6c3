"""Command-line interface: one binary, six subcommands.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error. All randomness
flows from --seed; outputs are byte-identical regardless of --workers. The
DATAEFF_LOG environment variable overrides the default log level; --log-level
wins over both. Logs go to stderr, machine output to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import coco, evalap, pipeline, postproc, swa
from .errors import ValidationError

logger = logging.getLogger("dataeff.cli")

LOG_LEVELS = ("debug", "info", "warning", "error")


@dataclass(frozen=True)
class GlobalConfig:
    seed: int = 0
    workers: int = 1
    log_level: str = "warning"

    def validate(self) -> "GlobalConfig":
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.log_level not in LOG_LEVELS:
            raise ValidationError(f"log level must be one of {LOG_LEVELS}")
        return self


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _setup_logging(level_flag: str | None) -> None:
    level_name = level_flag or os.environ.get("DATAEFF_LOG", "warning")
    level = getattr(logging, level_name.upper(), None)
    if level is None:
        raise ValidationError(f"unknown log level {level_name!r}")
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="dataeff", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=None)
    parser.add_argument("--json", action="store_true", help="machine-readable stdout")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("augment", help="offline dataset multiplication or online streaming")
    p.add_argument("--ann", required=True, help="input COCO annotations JSON")
    p.add_argument("--images", required=True, help="directory with the source images")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variants", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--online", default=None,
                   help="comma-separated ops (flip,crop,jitter,gridmask); switches to "
                        "streaming mode")
    p.add_argument("--epochs", type=int, default=1, help="epochs in streaming mode")
    p.add_argument("--config", default=None, help="JSON file overriding sampling parameters")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("soft-nms", help="soft non-maximum suppression over a results file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("linear", "gaussian"), default="gaussian")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--iou-threshold", type=float, default=0.3)
    p.add_argument("--score-threshold", type=float, default=0.001)
    p.add_argument("--max-per-image", type=int, default=100)
    p.set_defaults(func=_cmd_soft_nms)

    p = sub.add_parser("tta-fuse", help="back-project and fuse per-view detection files")
    p.add_argument("--views", nargs="+", required=True,
                   help="entries of the form path:scale:flip|noflip")
    p.add_argument("--orig-sizes", required=True,
                   help="JSON map of image_id to [width, height]")
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("linear", "gaussian"), default="gaussian")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--iou-threshold", type=float, default=0.3)
    p.add_argument("--score-threshold", type=float, default=0.001)
    p.add_argument("--max-per-image", type=int, default=100)
    p.set_defaults(func=_cmd_tta_fuse)

    p = sub.add_parser("evaluate", help="COCO-protocol AP over IoU thresholds")
    p.add_argument("--gt", required=True)
    p.add_argument("--dets", required=True)
    p.add_argument("--kind", choices=("box", "mask"), default="box")
    p.add_argument("--thresholds", default=None, help="start:step:stop, e.g. 0.5:0.05:0.95")
    p.add_argument("--max-dets", type=int, default=100)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("swa-average", help="elementwise average of checkpoints")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_swa_average)

    p = sub.add_parser("inspect", help="dataset statistics")
    p.add_argument("--ann", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def dispatch(argv: list[str]) -> int:
    """Run one command line; returns the process exit code."""
    parser = _build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dataeff: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        _setup_logging(args.log_level)
        return args.func(args)
    except ValidationError as exc:
        print(f"dataeff: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dataeff: i/o error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


# ---------------------------------------------------------------------------
# subcommands


def _read(path) -> bytes:
    return Path(path).read_bytes()


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(human)


def _cmd_augment(args) -> int:
    GlobalConfig(args.seed, args.workers).validate()
    dataset = coco.parse_dataset(_read(args.ann))
    ranges = None
    online_cfg = None
    if args.config:
        obj = json.loads(Path(args.config).read_text())
        if not isinstance(obj, dict):
            raise ValidationError("config file must hold a JSON object")
        for key in obj:
            if key not in ("offline", "online"):
                raise ValidationError(f"unknown config section {key!r}")
        if "offline" in obj:
            ranges = pipeline.ChainRanges.from_json(obj["offline"])
        if "online" in obj:
            online_cfg = pipeline.OnlineConfig.from_json(obj["online"])
    out_dir = Path(args.out)
    if args.online:
        ops = [op.strip() for op in args.online.split(",") if op.strip()]
        out_set, manifest = pipeline.run_online(
            dataset, args.images, out_dir, ops, args.epochs, args.seed,
            cfg=online_cfg, workers=args.workers)
        manifest_json = manifest
    else:
        out_set, manifest = pipeline.run_offline(
            dataset, args.images, out_dir, args.variants, args.seed,
            ranges=ranges, workers=args.workers)
        manifest_json = manifest.to_json()
    (out_dir / "annotations.json").write_bytes(coco.serialize_dataset(out_set))
    (out_dir / "manifest.json").write_text(json.dumps(manifest_json, indent=2))
    summary = {"images": len(out_set.images), "annotations": len(out_set.annotations),
               "out": str(out_dir)}
    _emit(args, summary,
          f"wrote {summary['images']} images / {summary['annotations']} annotations "
          f"to {out_dir}")
    return 0


def _cmd_soft_nms(args) -> int:
    cfg = postproc.SoftNmsConfig(args.method, args.sigma, args.iou_threshold,
                                 args.score_threshold, args.max_per_image).validate()
    dets = coco.parse_detections(_read(args.input))
    by_image: dict[int, list] = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    out = []
    for image_id in sorted(by_image):
        out.extend(postproc.soft_nms(by_image[image_id], cfg))
    Path(args.out).write_bytes(coco.serialize_detections(out))
    _emit(args, {"input": len(dets), "kept": len(out)},
          f"soft-nms kept {len(out)} of {len(dets)} detections")
    return 0


def _parse_view_arg(entry: str):
    parts = entry.rsplit(":", 2)
    if len(parts) != 3 or parts[2] not in ("flip", "noflip"):
        raise ValidationError(f"bad view entry {entry!r}; expected path:scale:flip|noflip")
    try:
        scale = float(parts[1])
    except ValueError as exc:
        raise ValidationError(f"bad view scale in {entry!r}") from exc
    return parts[0], scale, parts[2] == "flip"


def _cmd_tta_fuse(args) -> int:
    cfg = postproc.SoftNmsConfig(args.method, args.sigma, args.iou_threshold,
                                 args.score_threshold, args.max_per_image).validate()
    sizes_raw = json.loads(Path(args.orig_sizes).read_text())
    sizes = {int(k): (int(v[0]), int(v[1])) for k, v in sizes_raw.items()}
    views = []
    for entry in args.views:
        path, scale, flipped = _parse_view_arg(entry)
        views.append((scale, flipped, coco.parse_detections(_read(path))))
    image_ids = sorted({d.image_id for _, _, dets in views for d in dets})
    fused = []
    for image_id in image_ids:
        if image_id not in sizes:
            raise ValidationError(f"no original size given for image_id {image_id}")
        orig_w, orig_h = sizes[image_id]
        per_view = []
        for scale, flipped, dets in views:
            view = postproc.make_view(scale, flipped, orig_w, orig_h)
            per_view.append((view, [d for d in dets if d.image_id == image_id]))
        fused.extend(postproc.fuse_tta(per_view, cfg, orig_w, orig_h))
    Path(args.out).write_bytes(coco.serialize_detections(fused))
    _emit(args, {"images": len(image_ids), "detections": len(fused)},
          f"fused {len(views)} views over {len(image_ids)} images "
          f"into {len(fused)} detections")
    return 0


def _parse_thresholds(text: str) -> tuple[float, ...]:
    try:
        start, step, stop = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ValidationError(f"bad thresholds {text!r}; expected start:step:stop") from exc
    if step <= 0 or stop < start:
        raise ValidationError(f"bad thresholds {text!r}")
    count = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(count))


def _cmd_evaluate(args) -> int:
    thresholds = (_parse_thresholds(args.thresholds) if args.thresholds
                  else evalap.DEFAULT_IOU_THRESHOLDS)
    cfg = evalap.EvalConfig(thresholds, args.kind, args.max_dets).validate()
    gt = coco.parse_dataset(_read(args.gt))
    dets = coco.parse_detections(_read(args.dets))
    result = evalap.evaluate(gt, dets, cfg)
    names = {c.id: c.name for c in gt.categories}
    report = {
        "kind": cfg.iou_kind,
        "mean_ap": result.mean_ap,
        "ap_per_threshold": {f"{t:.2f}": v for t, v in result.ap_per_threshold.items()},
        "per_category": {
            str(cat): {"name": names.get(cat, ""), "mean_ap": res.mean_ap,
                       "ap_per_threshold": {f"{t:.2f}": v
                                            for t, v in res.ap_per_threshold.items()}}
            for cat, res in result.per_category.items()
        },
    }
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2))
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"{cfg.iou_kind} AP")
        for t, v in result.ap_per_threshold.items():
            print(f"  IoU {t:.2f}   {v:.4f}")
        for cat, res in result.per_category.items():
            label = names.get(cat) or str(cat)
            print(f"  category {cat} ({label})   mean AP {res.mean_ap:.4f}")
        print(f"mean AP {result.mean_ap:.4f}")
    return 0


def _cmd_swa_average(args) -> int:
    checkpoints = [swa.load_checkpoint(p) for p in args.inputs]
    averaged = swa.average_checkpoints(checkpoints)
    swa.save_checkpoint(averaged, args.out)
    _emit(args, {"inputs": len(checkpoints), "tensors": len(averaged), "out": args.out},
          f"averaged {len(checkpoints)} checkpoints ({len(averaged)} tensors) "
          f"into {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    dataset = coco.parse_dataset(_read(args.ann))
    histogram: dict[int, int] = {c.id: 0 for c in dataset.categories}
    for ann in dataset.annotations:
        histogram[ann.category_id] += 1
    names = {c.id: c.name for c in dataset.categories}
    payload = {
        "images": len(dataset.images),
        "annotations": len(dataset.annotations),
        "categories": len(dataset.categories),
        "per_category": {str(c): histogram[c] for c in sorted(histogram)},
    }
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"images:      {payload['images']}")
        print(f"annotations: {payload['annotations']}")
        print(f"categories:  {payload['categories']}")
        for cat in sorted(histogram):
            label = names.get(cat) or ""
            print(f"  {cat:>4} {label:<20} {histogram[cat]}")
    return 0
