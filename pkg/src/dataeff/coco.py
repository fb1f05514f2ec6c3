"""COCO-format dataset and detection-results I/O.

Covers JSON parsing/serialization with referential validation, binary masks
and their run-length codecs (integer counts and the 6-bit packed string
variant), polygon rasterization, and tight-box recovery from masks.

Masks are numpy bool arrays of shape (height, width), row-major. Run-length
counts follow the column-major pixel order and always start with a
background run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Union

import numpy as np

from .errors import ParseError, ValidationError

Polygon = list[float]


class BBox(NamedTuple):
    """Axis-aligned box, top-left origin, (x, y, width, height)."""

    x: float
    y: float
    w: float
    h: float

    def validate(self) -> "BBox":
        if not all(math.isfinite(v) for v in self):
            raise ValidationError(f"bbox has non-finite coordinates: {self}")
        if self.w < 0 or self.h < 0:
            raise ValidationError(f"bbox has negative size: {self}")
        return self

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values) -> "BBox":
        if not isinstance(values, (list, tuple)) or len(values) != 4:
            raise ValidationError(f"bbox must be a 4-element [x, y, w, h] list, got {values!r}")
        return cls(*(float(v) for v in values)).validate()


@dataclass(frozen=True)
class Rle:
    """Run-length encoded binary mask: size is (height, width), counts are
    alternating background/foreground run lengths in column-major order,
    starting with background."""

    size: tuple[int, int]
    counts: list[int]

    def __post_init__(self):
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))
        object.__setattr__(self, "counts", [int(c) for c in self.counts])

    def validate(self) -> "Rle":
        h, w = self.size
        if h < 1 or w < 1:
            raise ValidationError(f"RLE size must be positive, got {self.size}")
        if any(c < 0 for c in self.counts):
            raise ValidationError("RLE counts must be non-negative")
        total = sum(self.counts)
        if total != h * w:
            raise ValidationError(f"RLE counts sum to {total}, expected {h}x{w}={h * w}")
        return self

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])


Segmentation = Union[list, Rle, None]


@dataclass
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int

    def validate(self) -> "ImageRecord":
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"image {self.id} has non-positive dimensions "
                                  f"{self.width}x{self.height}")
        return self


@dataclass
class Category:
    id: int
    name: str = ""
    supercategory: str = ""


@dataclass
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox
    segmentation: Segmentation = None
    area: float = 0.0
    iscrowd: int = 0

    def validate(self) -> "Annotation":
        self.bbox.validate()
        if self.iscrowd not in (0, 1):
            raise ValidationError(f"annotation {self.id}: iscrowd must be 0 or 1")
        if self.area < 0:
            raise ValidationError(f"annotation {self.id}: negative area")
        if isinstance(self.segmentation, Rle):
            self.segmentation.validate()
        elif isinstance(self.segmentation, list):
            for poly in self.segmentation:
                _validate_polygon(poly, where=f"annotation {self.id}")
        elif self.segmentation is not None:
            raise ValidationError(f"annotation {self.id}: bad segmentation type")
        return self


@dataclass
class Detection:
    """One scored detection, the unit of postprocessing and evaluation."""

    image_id: int
    category_id: int
    bbox: BBox
    score: float
    mask: Rle | None = None

    def validate(self) -> "Detection":
        self.bbox.validate()
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"detection score {self.score} outside [0, 1]")
        if self.mask is not None:
            self.mask.validate()
        return self


@dataclass
class CocoDataset:
    images: list[ImageRecord] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    categories: list[Category] = field(default_factory=list)
    # pass-through for info/licenses blocks; re-emitted verbatim
    extra: dict = field(default_factory=dict)

    def validate(self) -> "CocoDataset":
        image_ids: set[int] = set()
        for rec in self.images:
            rec.validate()
            if rec.id in image_ids:
                raise ValidationError(f"duplicate image id {rec.id}")
            image_ids.add(rec.id)
        cat_ids: set[int] = set()
        for cat in self.categories:
            if cat.id in cat_ids:
                raise ValidationError(f"duplicate category id {cat.id}")
            cat_ids.add(cat.id)
        dims = {rec.id: (rec.height, rec.width) for rec in self.images}
        ann_ids: set[int] = set()
        for ann in self.annotations:
            ann.validate()
            if ann.id in ann_ids:
                raise ValidationError(f"duplicate annotation id {ann.id}")
            ann_ids.add(ann.id)
            if ann.image_id not in image_ids:
                raise ValidationError(
                    f"annotation {ann.id} references unknown image_id {ann.image_id}")
            if ann.category_id not in cat_ids:
                raise ValidationError(
                    f"annotation {ann.id} references unknown category_id {ann.category_id}")
            if isinstance(ann.segmentation, Rle) and ann.segmentation.size != dims[ann.image_id]:
                raise ValidationError(
                    f"annotation {ann.id}: RLE size {ann.segmentation.size} does not match "
                    f"image dimensions {dims[ann.image_id]}")
        return self

    def image_by_id(self, image_id: int) -> ImageRecord:
        for rec in self.images:
            if rec.id == image_id:
                return rec
        raise ValidationError(f"unknown image id {image_id}")

    def annotations_for(self, image_id: int) -> list[Annotation]:
        return [a for a in self.annotations if a.image_id == image_id]


def _validate_polygon(poly, where: str = "polygon") -> None:
    if not isinstance(poly, (list, tuple)):
        raise ValidationError(f"{where}: polygon must be a flat coordinate list")
    if len(poly) < 6 or len(poly) % 2 != 0:
        raise ValidationError(f"{where}: polygon needs at least 3 (x, y) vertices, "
                              f"got {len(poly)} values")
    if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in poly):
        raise ValidationError(f"{where}: polygon coordinates must be finite numbers")


# ---------------------------------------------------------------------------
# masks


def ensure_mask(mask: np.ndarray) -> np.ndarray:
    if not isinstance(mask, np.ndarray) or mask.ndim != 2 or mask.dtype != bool:
        raise ValidationError("mask must be a 2-D bool array")
    if mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ValidationError("mask must have positive dimensions")
    return mask


def rle_encode(mask: np.ndarray) -> Rle:
    """Encode a binary mask as alternating background/foreground run lengths
    over the column-major pixel sequence. The first count is always the
    leading background run (0 if the first pixel is foreground)."""
    ensure_mask(mask)
    flat = mask.ravel(order="F")
    n = flat.size
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return Rle((mask.shape[0], mask.shape[1]), counts)


def rle_decode(rle: Rle) -> np.ndarray:
    """Inverse of rle_encode; raises if the counts do not cover the raster."""
    rle.validate()
    h, w = rle.size
    values = np.arange(len(rle.counts)) % 2 == 1
    flat = np.repeat(values, rle.counts)
    return flat.reshape((h, w), order="F")


def rle_to_string(rle: Rle) -> str:
    """Pack counts into the compact string form: each value is emitted in 6-bit
    groups (5 data bits plus a continuation bit, low bits first, characters
    48..111), and counts from index 3 on are delta-encoded against the count
    two positions back."""
    out: list[str] = []
    counts = rle.counts
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        while True:
            ch = x & 0x1F
            x >>= 5
            more = (x != -1) if (ch & 0x10) else (x != 0)
            if more:
                ch |= 0x20
            out.append(chr(ch + 48))
            if not more:
                break
    return "".join(out)


def rle_from_string(data: str, height: int, width: int) -> Rle:
    """Inverse of rle_to_string for a mask of the given dimensions."""
    counts: list[int] = []
    p = 0
    n = len(data)
    while p < n:
        x = 0
        k = 0
        while True:
            if p >= n:
                raise ParseError(f"truncated RLE string at character {p}")
            ch = ord(data[p]) - 48
            if ch < 0 or ch > 63:
                raise ParseError(f"invalid RLE character {data[p]!r} at index {p}")
            x |= (ch & 0x1F) << (5 * k)
            p += 1
            k += 1
            if not ch & 0x20:
                if ch & 0x10:
                    x |= -1 << (5 * k)
                break
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return Rle((height, width), counts).validate()


def polygons_to_mask(polys: list[Polygon], height: int, width: int) -> np.ndarray:
    """Rasterize a union of polygons: a pixel is foreground iff its center
    (col + 0.5, row + 0.5) lies strictly inside a polygon under the even-odd
    rule. Centers exactly on a polygon's boundary do not count as inside it."""
    if height < 1 or width < 1:
        raise ValidationError("mask dimensions must be positive")
    mask = np.zeros((height, width), dtype=bool)
    for poly in polys:
        _validate_polygon(poly)
        pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        x1, y1 = pts[:, 0], pts[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        single = np.zeros((height, width), dtype=bool)
        lo = max(0, int(math.floor(y1.min())))
        hi = min(height, int(math.ceil(y1.max())))
        for row in range(lo, hi):
            yc = row + 0.5
            crossing = (y1 > yc) != (y2 > yc)
            if not crossing.any():
                continue
            xs = np.sort(x1[crossing] + (yc - y1[crossing]) * (x2[crossing] - x1[crossing])
                         / (y2[crossing] - y1[crossing]))
            for a, b in zip(xs[0::2], xs[1::2]):
                c0 = max(0, int(np.floor(a - 0.5)) + 1)
                c1 = min(width - 1, int(np.ceil(b - 0.5)) - 1)
                if c1 >= c0:
                    single[row, c0:c1 + 1] = True
        _clear_boundary_centers(single, pts)
        mask |= single
    return mask


def _center_ordinate(v: float) -> int | None:
    # pixel index whose center coordinate equals v along one axis, else None
    idx = math.floor(v)
    return idx if v - idx == 0.5 else None


def _clear_boundary_centers(single: np.ndarray, pts: np.ndarray) -> None:
    """Strict-interior rule: a pixel whose center lies exactly on an edge or
    vertex of this polygon is background for it."""
    height, width = single.shape
    n = len(pts)
    for i in range(n):
        xa, ya = pts[i]
        xb, yb = pts[(i + 1) % n]
        if ya == yb:
            row = _center_ordinate(ya)
            if row is None or not (0 <= row < height):
                continue
            c0 = max(0, int(math.ceil(min(xa, xb) - 0.5)))
            c1 = min(width - 1, int(math.floor(max(xa, xb) - 0.5)))
            if c1 >= c0:
                single[row, c0:c1 + 1] = False
            continue
        y_lo, y_hi = (ya, yb) if ya < yb else (yb, ya)
        r0 = max(0, int(math.ceil(y_lo - 0.5)))
        r1 = min(height - 1, int(math.floor(y_hi - 0.5)))
        for row in range(r0, r1 + 1):
            yc = row + 0.5
            x = xa + (yc - ya) * (xb - xa) / (yb - ya)
            col = _center_ordinate(x)
            if col is not None and 0 <= col < width:
                single[row, col] = False


def bbox_from_mask(mask: np.ndarray) -> BBox:
    """Tightest (x, y, w, h) covering all foreground pixels; (0, 0, 0, 0) for
    an all-background mask."""
    ensure_mask(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return BBox(0.0, 0.0, 0.0, 0.0)
    cols = np.flatnonzero(mask.any(axis=0))
    return BBox(float(cols[0]), float(rows[0]),
                float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


def annotation_mask(ann: Annotation, height: int, width: int) -> np.ndarray:
    """Decode an annotation's segmentation to a binary mask at image size."""
    seg = ann.segmentation
    if isinstance(seg, Rle):
        if seg.size != (height, width):
            raise ValidationError(f"annotation {ann.id}: RLE size {seg.size} does not match "
                                  f"image dimensions {(height, width)}")
        return rle_decode(seg)
    if isinstance(seg, list):
        return polygons_to_mask(seg, height, width)
    raise ValidationError(f"annotation {ann.id} has no segmentation to rasterize")


# ---------------------------------------------------------------------------
# JSON parsing / serialization


def _load_json(data: bytes | str):
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8 at byte {exc.start}") from exc
    else:
        text = data
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON at offset {exc.pos}: {exc.msg}") from exc


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ValidationError(f"{where}: missing required field '{key}'")
    return obj[key]


def _parse_segmentation(seg, where: str) -> Segmentation:
    if seg is None or seg == []:
        return None
    if isinstance(seg, dict):
        size = _require(seg, "size", where)
        counts = _require(seg, "counts", where)
        if not (isinstance(size, list) and len(size) == 2):
            raise ValidationError(f"{where}: RLE size must be [height, width]")
        h, w = int(size[0]), int(size[1])
        if isinstance(counts, str):
            return rle_from_string(counts, h, w)
        if isinstance(counts, list):
            return Rle((h, w), counts).validate()
        raise ValidationError(f"{where}: RLE counts must be a string or an integer list")
    if isinstance(seg, list):
        for poly in seg:
            _validate_polygon(poly, where)
        return [list(map(float, poly)) for poly in seg]
    raise ValidationError(f"{where}: unsupported segmentation value")


def parse_dataset(data: bytes | str) -> CocoDataset:
    """Parse COCO dataset JSON (images/annotations/categories) and validate
    referential integrity and id uniqueness."""
    obj = _load_json(data)
    if not isinstance(obj, dict):
        raise ParseError("top-level JSON value must be an object")
    images = []
    for rec in obj.get("images", []):
        images.append(ImageRecord(
            id=int(_require(rec, "id", "image")),
            file_name=str(_require(rec, "file_name", "image")),
            width=int(_require(rec, "width", "image")),
            height=int(_require(rec, "height", "image")),
        ))
    categories = []
    for cat in obj.get("categories", []):
        categories.append(Category(
            id=int(_require(cat, "id", "category")),
            name=str(cat.get("name", "")),
            supercategory=str(cat.get("supercategory", "")),
        ))
    annotations = []
    for raw in obj.get("annotations", []):
        ann_id = int(_require(raw, "id", "annotation"))
        where = f"annotation {ann_id}"
        annotations.append(Annotation(
            id=ann_id,
            image_id=int(_require(raw, "image_id", where)),
            category_id=int(_require(raw, "category_id", where)),
            bbox=BBox.from_list(_require(raw, "bbox", where)),
            segmentation=_parse_segmentation(raw.get("segmentation"), where),
            area=float(_require(raw, "area", where)),
            iscrowd=int(raw.get("iscrowd", 0)),
        ))
    extra = {k: obj[k] for k in ("info", "licenses") if k in obj}
    return CocoDataset(images, annotations, categories, extra).validate()


def _segmentation_to_json(seg: Segmentation):
    if isinstance(seg, Rle):
        return {"size": [seg.size[0], seg.size[1]], "counts": list(seg.counts)}
    return seg


def serialize_dataset(dataset: CocoDataset) -> bytes:
    """Emit conventional COCO JSON; RLE segmentations are written as integer
    count lists. parse_dataset inverts the result."""
    obj = dict(dataset.extra)
    obj["images"] = [
        {"id": r.id, "file_name": r.file_name, "width": r.width, "height": r.height}
        for r in dataset.images
    ]
    obj["annotations"] = []
    for a in dataset.annotations:
        entry = {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.category_id,
            "bbox": a.bbox.to_list(),
            "area": a.area,
            "iscrowd": a.iscrowd,
        }
        if a.segmentation is not None:
            entry["segmentation"] = _segmentation_to_json(a.segmentation)
        obj["annotations"].append(entry)
    obj["categories"] = [
        {"id": c.id, "name": c.name, "supercategory": c.supercategory}
        for c in dataset.categories
    ]
    return json.dumps(obj, indent=2).encode("utf-8")


def parse_detections(data: bytes | str) -> list[Detection]:
    """Parse a COCO results file: a flat JSON array of detection entries."""
    obj = _load_json(data)
    if not isinstance(obj, list):
        raise ParseError("detection results must be a JSON array")
    dets = []
    for i, raw in enumerate(obj):
        where = f"detection {i}"
        if not isinstance(raw, dict):
            raise ValidationError(f"{where}: entry must be an object")
        seg = _parse_segmentation(raw.get("segmentation"), where)
        if seg is not None and not isinstance(seg, Rle):
            raise ValidationError(f"{where}: detection segmentation must be RLE")
        dets.append(Detection(
            image_id=int(_require(raw, "image_id", where)),
            category_id=int(_require(raw, "category_id", where)),
            bbox=BBox.from_list(_require(raw, "bbox", where)),
            score=float(_require(raw, "score", where)),
            mask=seg,
        ).validate())
    return dets


def serialize_detections(dets: list[Detection]) -> bytes:
    """Emit a COCO results array; masks are written in the packed string form."""
    entries = []
    for d in dets:
        entry = {
            "image_id": d.image_id,
            "category_id": d.category_id,
            "bbox": d.bbox.to_list(),
            "score": d.score,
        }
        if d.mask is not None:
            entry["segmentation"] = {
                "size": [d.mask.size[0], d.mask.size[1]],
                "counts": rle_to_string(d.mask),
            }
        entries.append(entry)
    return json.dumps(entries, indent=2).encode("utf-8")


def copy_annotation(ann: Annotation) -> Annotation:
    """Deep copy; segmentation payloads are duplicated, not aliased."""
    seg = ann.segmentation
    if isinstance(seg, Rle):
        seg = Rle(seg.size, list(seg.counts))
    elif isinstance(seg, list):
        seg = [list(p) for p in seg]
    return replace(ann, segmentation=seg)
