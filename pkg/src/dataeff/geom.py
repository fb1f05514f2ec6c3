"""Geometry-affecting augmentations that keep annotations consistent:
horizontal flip, random crop with mask clipping, box jitter, and grid-mask
occlusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .coco import (Annotation, BBox, Rle, annotation_mask, bbox_from_mask, copy_annotation,
                   rle_decode, rle_encode)
from .errors import ValidationError
from .imgproc import ensure_image

_SEED_MASK = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class GridMaskConfig:
    """Regular lattice of square occluded cells: within every unit x unit
    cell, the leading span of round(ratio * unit) pixels along each axis is
    filled."""

    unit: int
    ratio: float
    offset_x: int = 0
    offset_y: int = 0
    fill: tuple[int, int, int] = (0, 0, 0)

    def validate(self) -> "GridMaskConfig":
        if not isinstance(self.unit, int) or self.unit < 2:
            raise ValidationError(f"grid-mask unit must be an integer >= 2, got {self.unit}")
        if not (0.0 < self.ratio < 1.0):
            raise ValidationError(f"grid-mask ratio must lie in (0, 1), got {self.ratio}")
        if not (0 <= self.offset_x < self.unit and 0 <= self.offset_y < self.unit):
            raise ValidationError("grid-mask offsets must lie in [0, unit)")
        if len(self.fill) != 3 or not all(0 <= int(v) <= 255 for v in self.fill):
            raise ValidationError(f"grid-mask fill must be an RGB triple, got {self.fill}")
        return self


@dataclass(frozen=True)
class CropConfig:
    target_w: int
    target_h: int
    min_visibility: float = 0.25

    def validate(self) -> "CropConfig":
        if self.target_w < 1 or self.target_h < 1:
            raise ValidationError(f"crop target must be positive, got "
                                  f"{self.target_w}x{self.target_h}")
        if not (0.0 <= self.min_visibility <= 1.0):
            raise ValidationError(f"min_visibility must lie in [0, 1], got "
                                  f"{self.min_visibility}")
        return self


@dataclass(frozen=True)
class JitterConfig:
    """Each box edge is displaced by U[-magnitude * side, +magnitude * side]
    where side is the box extent along that edge's axis."""

    magnitude: float

    def validate(self) -> "JitterConfig":
        if not (0.0 <= self.magnitude <= 0.5):
            raise ValidationError(f"jitter magnitude must lie in [0, 0.5], got "
                                  f"{self.magnitude}")
        return self


def _check_in_bounds(ann: Annotation, width: int, height: int) -> None:
    b = ann.bbox
    if b.x < 0 or b.y < 0 or b.x + b.w > width or b.y + b.h > height:
        raise ValidationError(f"annotation {ann.id} bbox {tuple(b)} outside "
                              f"{width}x{height} image bounds")


def _mirror_segmentation(seg, width: int):
    if isinstance(seg, Rle):
        return rle_encode(rle_decode(seg)[:, ::-1])
    if isinstance(seg, list):
        return [[width - v if i % 2 == 0 else v for i, v in enumerate(poly)]
                for poly in seg]
    return None


def hflip(img: np.ndarray, anns: list[Annotation]) -> tuple[np.ndarray, list[Annotation]]:
    """Mirror the image about the vertical axis and remap every annotation:
    boxes to (W - x - w), polygon x coordinates to (W - x), RLE masks
    decoded, mirrored, and re-encoded. An involution."""
    ensure_image(img)
    height, width = img.shape[:2]
    out_anns = []
    for ann in anns:
        _check_in_bounds(ann, width, height)
        if isinstance(ann.segmentation, Rle) and ann.segmentation.size != (height, width):
            raise ValidationError(f"annotation {ann.id}: RLE size "
                                  f"{ann.segmentation.size} does not match image "
                                  f"{(height, width)}")
        out_anns.append(replace(
            ann,
            bbox=BBox(width - ann.bbox.x - ann.bbox.w, ann.bbox.y, ann.bbox.w, ann.bbox.h),
            segmentation=_mirror_segmentation(ann.segmentation, width),
        ))
    return np.ascontiguousarray(img[:, ::-1]), out_anns


def _pad_to(img: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h >= height and w >= width:
        return img
    out = np.zeros((max(h, height), max(w, width), 3), dtype=np.uint8)
    out[:h, :w] = img
    return out


def crop_at(img: np.ndarray, anns: list[Annotation], x0: int, y0: int,
            cfg: CropConfig) -> tuple[np.ndarray, list[Annotation]]:
    """Crop a fixed window. Annotation masks are rasterized, intersected with
    the window, and re-encoded as RLE; boxes and areas are recomputed from the
    clipped mask; annotations whose surviving mask fraction falls below
    cfg.min_visibility are dropped. Box-only annotations are clipped
    arithmetically with visibility measured on box area."""
    ensure_image(img)
    cfg.validate()
    src_h, src_w = img.shape[:2]
    padded = _pad_to(img, cfg.target_w, cfg.target_h)
    pad_h, pad_w = padded.shape[:2]
    if not (0 <= x0 <= pad_w - cfg.target_w and 0 <= y0 <= pad_h - cfg.target_h):
        raise ValidationError(f"crop origin ({x0}, {y0}) outside valid range")
    out_img = padded[y0:y0 + cfg.target_h, x0:x0 + cfg.target_w].copy()
    out_anns = []
    for ann in anns:
        if ann.segmentation is None:
            clipped = _clip_box(ann.bbox, x0, y0, cfg.target_w, cfg.target_h)
            denom = ann.bbox.w * ann.bbox.h
            vis = (clipped.w * clipped.h / denom) if denom > 0 else 0.0
            if vis < cfg.min_visibility:
                continue
            out_anns.append(replace(ann, bbox=clipped, area=clipped.w * clipped.h))
            continue
        mask = annotation_mask(ann, src_h, src_w)
        total = int(mask.sum())
        full = np.zeros((pad_h, pad_w), dtype=bool)
        full[:src_h, :src_w] = mask
        sub = full[y0:y0 + cfg.target_h, x0:x0 + cfg.target_w]
        kept = int(sub.sum())
        vis = kept / total if total > 0 else 0.0
        if total == 0 or vis < cfg.min_visibility:
            continue
        out_anns.append(replace(ann, bbox=bbox_from_mask(sub),
                                segmentation=rle_encode(sub), area=float(kept)))
    return out_img, out_anns


def _clip_box(b: BBox, x0: int, y0: int, w: int, h: int) -> BBox:
    left = min(max(b.x - x0, 0.0), float(w))
    top = min(max(b.y - y0, 0.0), float(h))
    right = min(max(b.x + b.w - x0, 0.0), float(w))
    bottom = min(max(b.y + b.h - y0, 0.0), float(h))
    return BBox(left, top, max(0.0, right - left), max(0.0, bottom - top))


def random_crop(img: np.ndarray, anns: list[Annotation], cfg: CropConfig,
                seed: int) -> tuple[np.ndarray, list[Annotation]]:
    """Crop to (target_w, target_h) at an origin drawn uniformly over valid
    positions; inputs smaller than the target are padded bottom/right with
    black first. Cropping the full image exactly is the identity."""
    ensure_image(img)
    cfg.validate()
    h, w = img.shape[:2]
    if (w, h) == (cfg.target_w, cfg.target_h):
        return img.copy(), [copy_annotation(a) for a in anns]
    rng = np.random.default_rng(int(seed) & _SEED_MASK)
    x0 = int(rng.integers(0, max(w, cfg.target_w) - cfg.target_w + 1))
    y0 = int(rng.integers(0, max(h, cfg.target_h) - cfg.target_h + 1))
    return crop_at(img, anns, x0, y0, cfg)


def bbox_jitter(anns: list[Annotation], img_w: int, img_h: int, cfg: JitterConfig,
                seed: int) -> list[Annotation]:
    """Displace each box's four edges independently, clip to image bounds and
    non-negative size; segmentation and area are untouched. Magnitude 0
    returns bit-identical annotations."""
    cfg.validate()
    if cfg.magnitude == 0.0:
        return [copy_annotation(a) for a in anns]
    rng = np.random.default_rng(int(seed) & _SEED_MASK)
    out = []
    for ann in anns:
        b = ann.bbox
        dx = cfg.magnitude * b.w
        dy = cfg.magnitude * b.h
        left = b.x + rng.uniform(-dx, dx)
        top = b.y + rng.uniform(-dy, dy)
        right = b.x + b.w + rng.uniform(-dx, dx)
        bottom = b.y + b.h + rng.uniform(-dy, dy)
        left = min(max(left, 0.0), float(img_w))
        right = min(max(right, 0.0), float(img_w))
        top = min(max(top, 0.0), float(img_h))
        bottom = min(max(bottom, 0.0), float(img_h))
        new = BBox(left, top, max(0.0, right - left), max(0.0, bottom - top))
        out.append(replace(copy_annotation(ann), bbox=new))
    return out


def grid_mask(img: np.ndarray, cfg: GridMaskConfig) -> np.ndarray:
    """Fill pixel (x, y) with cfg.fill iff both ((x + offset_x) mod unit) and
    ((y + offset_y) mod unit) fall inside the per-axis masked span of
    round(ratio * unit) pixels. Annotations are deliberately not modified."""
    ensure_image(img)
    cfg.validate()
    h, w = img.shape[:2]
    span = int(math.floor(cfg.ratio * cfg.unit + 0.5))
    out = img.copy()
    if span == 0:
        return out
    xs = ((np.arange(w) + cfg.offset_x) % cfg.unit) < span
    ys = ((np.arange(h) + cfg.offset_y) % cfg.unit) < span
    cells = ys[:, None] & xs[None, :]
    out[cells] = np.asarray(cfg.fill, dtype=np.uint8)
    return out
