"""Detection postprocessing: box/mask IoU, soft non-maximum suppression, and
test-time-augmentation back-projection and fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .coco import BBox, Detection, Rle, rle_decode, rle_encode
from .errors import ValidationError


@dataclass(frozen=True)
class SoftNmsConfig:
    method: str = "gaussian"
    sigma: float = 0.5
    iou_threshold: float = 0.3
    score_threshold: float = 0.001
    max_per_image: int = 100

    def validate(self) -> "SoftNmsConfig":
        if self.method not in ("linear", "gaussian"):
            raise ValidationError(f"soft-NMS method must be linear or gaussian, "
                                  f"got {self.method!r}")
        if not (self.sigma > 0):
            raise ValidationError(f"soft-NMS sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.iou_threshold <= 1.0):
            raise ValidationError(f"iou_threshold must lie in [0, 1], got {self.iou_threshold}")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValidationError(f"score_threshold must lie in [0, 1], "
                                  f"got {self.score_threshold}")
        if self.max_per_image < 1:
            raise ValidationError(f"max_per_image must be >= 1, got {self.max_per_image}")
        return self


@dataclass(frozen=True)
class TtaView:
    """One inference view: the original image rescaled by `scale` (and
    optionally mirrored), with the resulting raster dimensions."""

    scale: float
    flipped: bool
    view_width: int
    view_height: int

    def validate(self) -> "TtaView":
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValidationError(f"view scale must be positive, got {self.scale}")
        if self.view_width < 1 or self.view_height < 1:
            raise ValidationError("view dimensions must be positive")
        return self


def view_dims(orig_w: int, orig_h: int, scale: float) -> tuple[int, int]:
    """Canonical view raster size for a scale factor (round half away)."""
    return (int(math.floor(orig_w * scale + 0.5)),
            int(math.floor(orig_h * scale + 0.5)))


def make_view(scale: float, flipped: bool, orig_w: int, orig_h: int) -> TtaView:
    w, h = view_dims(orig_w, orig_h, scale)
    return TtaView(scale, flipped, w, h).validate()


def box_iou(a: BBox, b: BBox, crowd: bool = False) -> float:
    """Intersection over union of xywh boxes in continuous geometry; when
    `crowd` is set the denominator is area(a) instead of the union (b is the
    crowd region)."""
    inter_w = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    inter_h = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(0.0, inter_w) * max(0.0, inter_h)
    area_a = a.w * a.h
    denom = area_a if crowd else area_a + b.w * b.h - inter
    if denom <= 0:
        return 0.0
    return inter / denom


def _foreground_runs(rle: Rle) -> tuple[list[int], list[int]]:
    starts, ends = [], []
    pos = 0
    for i, c in enumerate(rle.counts):
        if i % 2 == 1 and c > 0:
            starts.append(pos)
            ends.append(pos + c)
        pos += c
    return starts, ends


def mask_iou(a: Rle, b: Rle, crowd: bool = False) -> float:
    """IoU of two RLE masks computed directly on the runs; `crowd` switches
    the denominator to area(a) (b is the crowd region)."""
    a.validate()
    b.validate()
    if a.size != b.size:
        raise ValidationError(f"mask size mismatch: {a.size} vs {b.size}")
    sa, ea = _foreground_runs(a)
    sb, eb = _foreground_runs(b)
    inter = 0
    i = j = 0
    while i < len(sa) and j < len(sb):
        lo = max(sa[i], sb[j])
        hi = min(ea[i], eb[j])
        if hi > lo:
            inter += hi - lo
        if ea[i] <= eb[j]:
            i += 1
        else:
            j += 1
    area_a = sum(e - s for s, e in zip(sa, ea))
    area_b = sum(e - s for s, e in zip(sb, eb))
    denom = area_a if crowd else area_a + area_b - inter
    if denom <= 0:
        return 0.0
    return inter / denom


def soft_nms(dets: list[Detection], cfg: SoftNmsConfig) -> list[Detection]:
    """Greedy score-decay suppression over one image: repeatedly emit the
    highest-scoring remaining detection, decay every remaining same-category
    score by the configured rule, and drop detections that fall below the
    score threshold. Stops after max_per_image emissions. Output is sorted by
    final score descending, ties broken by original score then input order."""
    cfg.validate()
    if not dets:
        return []
    image_ids = {d.image_id for d in dets}
    if len(image_ids) > 1:
        raise ValidationError(f"soft-NMS input mixes image ids: {sorted(image_ids)}")
    n = len(dets)
    current = np.array([d.score for d in dets], dtype=np.float64)
    original = current.copy()
    cats = np.array([d.category_id for d in dets])
    boxes = np.array([[d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h] for d in dets],
                     dtype=np.float64)
    alive = np.ones(n, dtype=bool)
    emitted: list[tuple[int, float]] = []
    while alive.any() and len(emitted) < cfg.max_per_image:
        candidates = np.flatnonzero(alive)
        best = max(candidates, key=lambda i: (current[i], original[i], -i))
        emitted.append((best, float(current[best])))
        alive[best] = False
        peers = candidates[(candidates != best) & (cats[candidates] == cats[best])]
        if peers.size == 0:
            continue
        ious = _box_iou_many(boxes[best], boxes[peers])
        if cfg.method == "gaussian":
            current[peers] *= np.exp(-(ious * ious) / cfg.sigma)
        else:
            decay = np.where(ious > cfg.iou_threshold, 1.0 - ious, 1.0)
            current[peers] *= decay
        dead = peers[current[peers] < cfg.score_threshold]
        alive[dead] = False
    emitted.sort(key=lambda item: (-item[1], -original[item[0]], item[0]))
    return [replace(dets[i], score=score) for i, score in emitted]


def _box_iou_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    x1 = np.maximum(box[0], others[:, 0])
    y1 = np.maximum(box[1], others[:, 1])
    x2 = np.minimum(box[0] + box[2], others[:, 0] + others[:, 2])
    y2 = np.minimum(box[1] + box[3], others[:, 1] + others[:, 3])
    inter = np.maximum(0.0, x2 - x1) * np.maximum(0.0, y2 - y1)
    union = box[2] * box[3] + others[:, 2] * others[:, 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def _resize_mask_nn(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize with pixel-center sampling."""
    in_h, in_w = mask.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(np.int64), in_w - 1)
    return mask[rows][:, cols]


def backproject_view(dets: list[Detection], view: TtaView, orig_w: int,
                     orig_h: int) -> list[Detection]:
    """Map detections from a view back to original-image coordinates: undo
    the mirror in view space, divide box coordinates by the scale, and
    nearest-neighbor resize masks to the original raster."""
    view.validate()
    expect = view_dims(orig_w, orig_h, view.scale)
    if (view.view_width, view.view_height) != expect:
        raise ValidationError(f"view dims {(view.view_width, view.view_height)} inconsistent "
                              f"with scale {view.scale} of {orig_w}x{orig_h} "
                              f"(expected {expect})")
    out = []
    for d in dets:
        b = d.bbox
        mask = d.mask
        if view.flipped:
            b = BBox(view.view_width - b.x - b.w, b.y, b.w, b.h)
        b = BBox(b.x / view.scale, b.y / view.scale, b.w / view.scale, b.h / view.scale)
        if mask is not None:
            if mask.size != (view.view_height, view.view_width):
                raise ValidationError(f"detection mask size {mask.size} does not match view "
                                      f"{(view.view_height, view.view_width)}")
            bits = rle_decode(mask)
            if view.flipped:
                bits = bits[:, ::-1]
            mask = rle_encode(_resize_mask_nn(bits, orig_h, orig_w))
        out.append(replace(d, bbox=b, mask=mask))
    return out


def fuse_tta(views: list[tuple[TtaView, list[Detection]]], cfg: SoftNmsConfig,
             orig_w: int, orig_h: int) -> list[Detection]:
    """Back-project every view, pool the detections, and run soft-NMS over
    the pool. Emitted detections keep their own masks (no mask voting)."""
    pool: list[Detection] = []
    for view, dets in views:
        pool.extend(backproject_view(dets, view, orig_w, orig_h))
    return soft_nms(pool, cfg)
