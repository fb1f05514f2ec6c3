"""COCO-protocol average precision for boxes and masks: greedy matching at a
set of IoU thresholds, 101-point interpolated AP, category averaging with
crowd regions treated as lenient ignore targets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coco import Annotation, CocoDataset, Detection, Rle, annotation_mask, rle_encode
from .errors import ValidationError
from .postproc import box_iou, mask_iou

DEFAULT_IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    iou_kind: str = "box"
    max_dets: int = 100
    recall_points: int = 101

    def validate(self) -> "EvalConfig":
        ts = self.iou_thresholds
        if not ts or any(not (0.0 < t <= 1.0) for t in ts):
            raise ValidationError(f"iou thresholds must lie in (0, 1], got {ts}")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"iou thresholds must be strictly increasing, got {ts}")
        if self.iou_kind not in ("box", "mask"):
            raise ValidationError(f"iou_kind must be box or mask, got {self.iou_kind!r}")
        if self.max_dets < 1:
            raise ValidationError(f"max_dets must be >= 1, got {self.max_dets}")
        if self.recall_points < 2:
            raise ValidationError(f"recall_points must be >= 2, got {self.recall_points}")
        return self


@dataclass
class CategoryResult:
    ap_per_threshold: dict[float, float]
    mean_ap: float


@dataclass
class EvalResult:
    ap_per_threshold: dict[float, float]
    mean_ap: float
    per_category: dict[int, CategoryResult] = field(default_factory=dict)


def _pair_iou(det: Detection, gt: Annotation, kind: str,
              image_size: tuple[int, int] | None, crowd: bool) -> float:
    if kind == "box":
        return box_iou(det.bbox, gt.bbox, crowd=crowd)
    if det.mask is None:
        raise ValidationError(f"detection for image {det.image_id} lacks a mask; "
                              "mask evaluation needs RLE segmentations")
    gt_mask = gt.segmentation
    if not isinstance(gt_mask, Rle):
        if image_size is None:
            raise ValidationError(f"annotation {gt.id} has polygon segmentation; "
                                  "pass image_size to rasterize it")
        gt_mask = rle_encode(annotation_mask(gt, image_size[0], image_size[1]))
    return mask_iou(det.mask, gt_mask, crowd=crowd)


def match_detections(dets: list[Detection], gts: list[Annotation], iou_threshold: float,
                     kind: str = "box",
                     image_size: tuple[int, int] | None = None
                     ) -> list[tuple[Detection, Annotation | None]]:
    """Greedy per-image, per-category matching in score order: each detection
    takes the unmatched non-crowd ground truth with the highest IoU at or
    above the threshold (IoU ties go to the lower gt id). Detections that
    only reach a crowd region are paired with it; crowd regions may absorb
    any number of detections and such pairs are ignored by scoring."""
    if kind not in ("box", "mask"):
        raise ValidationError(f"kind must be box or mask, got {kind!r}")
    scores = [d.score for d in dets]
    if any(a < b for a, b in zip(scores, scores[1:])):
        raise ValidationError("detections must be sorted by score descending")
    ids = {d.image_id for d in dets} | {g.image_id for g in gts}
    if len(ids) > 1:
        raise ValidationError(f"matching input mixes image ids: {sorted(ids)}")
    cats = {d.category_id for d in dets} | {g.category_id for g in gts}
    if len(cats) > 1:
        raise ValidationError(f"matching input mixes category ids: {sorted(cats)}")
    regular = [g for g in gts if not g.iscrowd]
    crowds = [g for g in gts if g.iscrowd]
    taken: set[int] = set()
    results: list[tuple[Detection, Annotation | None]] = []
    for det in dets:
        best = None
        best_key = (iou_threshold, 0)
        for gt in regular:
            if gt.id in taken:
                continue
            iou = _pair_iou(det, gt, kind, image_size, crowd=False)
            key = (iou, -gt.id)
            if iou >= iou_threshold and (best is None or key > best_key):
                best, best_key = gt, key
        if best is not None:
            taken.add(best.id)
            results.append((det, best))
            continue
        fallback = None
        fallback_key = (iou_threshold, 0)
        for gt in crowds:
            iou = _pair_iou(det, gt, kind, image_size, crowd=True)
            key = (iou, -gt.id)
            if iou >= iou_threshold and (fallback is None or key > fallback_key):
                fallback, fallback_key = gt, key
        results.append((det, fallback))
    return results


def average_precision(scored: list[tuple[float, bool]], n_gt: int,
                      recall_points: int = 101) -> float | None:
    """101-point interpolated AP from (score, is_true_positive) records
    pooled over images. Records are ranked by score descending (stable);
    precision is made non-increasing from the right and sampled at evenly
    spaced recalls in [0, 1]. Returns None when there is no ground truth
    (the category is skipped, not scored zero)."""
    if n_gt < 0:
        raise ValidationError("ground-truth count cannot be negative")
    if n_gt == 0:
        return None
    if not scored:
        return 0.0
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    flags = np.array([scored[i][1] for i in order], dtype=np.float64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    grid = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, grid, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(sampled.mean())


def evaluate(gt: CocoDataset, dets: list[Detection], cfg: EvalConfig) -> EvalResult:
    """Full COCO-style evaluation: per (category, threshold), match per image
    under the max_dets cap, pool matches, and compute interpolated AP;
    average over thresholds, then over categories that have non-crowd ground
    truth."""
    cfg.validate()
    gt.validate()
    dims = {rec.id: (rec.height, rec.width) for rec in gt.images}
    cat_ids = {c.id for c in gt.categories}
    for d in dets:
        d.validate()
        if d.image_id not in dims:
            raise ValidationError(f"detection references unknown image_id {d.image_id}")
        if d.category_id not in cat_ids:
            raise ValidationError(f"detection references unknown category_id {d.category_id}")

    gt_index: dict[tuple[int, int], list[Annotation]] = {}
    n_regular: dict[int, int] = {c: 0 for c in cat_ids}
    for ann in gt.annotations:
        gt_index.setdefault((ann.image_id, ann.category_id), []).append(ann)
        if not ann.iscrowd:
            n_regular[ann.category_id] += 1

    det_index: dict[tuple[int, int], list[Detection]] = {}
    for d in dets:
        det_index.setdefault((d.image_id, d.category_id), []).append(d)
    for key, group in det_index.items():
        group.sort(key=lambda d: -d.score)
        det_index[key] = group[:cfg.max_dets]

    image_ids = sorted(dims)
    scored_cats = [c for c in sorted(cat_ids) if n_regular[c] > 0]
    per_category: dict[int, CategoryResult] = {}
    for cat in scored_cats:
        per_threshold: dict[float, float] = {}
        for t in cfg.iou_thresholds:
            scored: list[tuple[float, bool]] = []
            for img in image_ids:
                group = det_index.get((img, cat), [])
                if not group:
                    continue
                pairs = match_detections(group, gt_index.get((img, cat), []), t,
                                         kind=cfg.iou_kind, image_size=dims[img])
                for det, matched in pairs:
                    if matched is not None and matched.iscrowd:
                        continue
                    scored.append((det.score, matched is not None))
            ap = average_precision(scored, n_regular[cat], cfg.recall_points)
            per_threshold[t] = 0.0 if ap is None else ap
        per_category[cat] = CategoryResult(
            per_threshold, float(np.mean(list(per_threshold.values()))))

    overall: dict[float, float] = {}
    for t in cfg.iou_thresholds:
        values = [per_category[c].ap_per_threshold[t] for c in scored_cats]
        overall[t] = float(np.mean(values)) if values else 0.0
    mean_ap = float(np.mean(list(overall.values()))) if overall else 0.0
    return EvalResult(overall, mean_ap, per_category)
