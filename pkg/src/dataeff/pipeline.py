"""Offline dataset multiplication and the online streaming augmentation mode.

The offline pipeline renders N variants per source image through a fixed
four-stage chain (color, quality, filter, hue), merges originals plus
variants into one dataset, and records every sampled chain in a manifest.
Per-(image, variant) generator streams make results independent of worker
count and processing order.
"""

from __future__ import annotations

import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coco import Annotation, CocoDataset, ImageRecord, copy_annotation
from .errors import ValidationError
from .geom import CropConfig, GridMaskConfig, JitterConfig, bbox_jitter, crop_at, grid_mask, hflip
from .imgproc import (Blur, Brightness, ColorJitter, Filter, Hue, Noise, Pixelization,
                      Saturation, Sharpen, ShufflePixels, COLOR_FAMILY, FILTER_KINDS,
                      PixelTransform, QUALITY_FAMILY, apply_pixel_transform, load_image,
                      save_png, transform_from_json, transform_to_json)

logger = logging.getLogger("dataeff.pipeline")

_SEED_MASK = 0xFFFFFFFFFFFFFFFF
_ID_STRIDE = 1000

ONLINE_OPS = ("flip", "crop", "jitter", "gridmask")


@dataclass(frozen=True)
class ChainSpec:
    """The fixed four-stage transform chain, applied in order."""

    color: PixelTransform
    quality: PixelTransform
    filter: Filter
    hue: Hue

    def validate(self) -> "ChainSpec":
        if not isinstance(self.color, COLOR_FAMILY):
            raise ValidationError(f"chain color stage has wrong family: {self.color!r}")
        if not isinstance(self.quality, QUALITY_FAMILY):
            raise ValidationError(f"chain quality stage has wrong family: {self.quality!r}")
        if not isinstance(self.filter, Filter):
            raise ValidationError(f"chain filter stage has wrong family: {self.filter!r}")
        if not isinstance(self.hue, Hue):
            raise ValidationError(f"chain hue stage has wrong family: {self.hue!r}")
        return self

    def stages(self) -> tuple[PixelTransform, ...]:
        return (self.color, self.quality, self.filter, self.hue)

    def to_json(self) -> dict:
        return {
            "color": transform_to_json(self.color),
            "quality": transform_to_json(self.quality),
            "filter": transform_to_json(self.filter),
            "hue": transform_to_json(self.hue),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ChainSpec":
        try:
            spec = cls(
                color=transform_from_json(obj["color"]),
                quality=transform_from_json(obj["quality"]),
                filter=transform_from_json(obj["filter"]),
                hue=transform_from_json(obj["hue"]),
            )
        except KeyError as exc:
            raise ValidationError(f"chain spec missing stage {exc}") from exc
        return spec.validate()


@dataclass(frozen=True)
class ManifestEntry:
    source_image_id: int
    variant_index: int
    chain: ChainSpec
    output_file_name: str


@dataclass
class AugManifest:
    master_seed: int
    entries: list[ManifestEntry] = field(default_factory=list)

    def validate(self) -> "AugManifest":
        keys = [(e.source_image_id, e.variant_index) for e in self.entries]
        if len(keys) != len(set(keys)):
            raise ValidationError("manifest has duplicate (source image, variant) pairs")
        return self

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "entries": [
                {
                    "source_image_id": e.source_image_id,
                    "variant_index": e.variant_index,
                    "chain": e.chain.to_json(),
                    "output_file_name": e.output_file_name,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AugManifest":
        entries = [
            ManifestEntry(
                source_image_id=int(e["source_image_id"]),
                variant_index=int(e["variant_index"]),
                chain=ChainSpec.from_json(e["chain"]),
                output_file_name=str(e["output_file_name"]),
            )
            for e in obj.get("entries", [])
        ]
        return cls(int(obj["master_seed"]), entries).validate()


@dataclass(frozen=True)
class ChainRanges:
    """Sampling ranges for chain parameters; values are inclusive bounds for
    uniform draws unless noted."""

    brightness: tuple[float, float] = (0.6, 1.4)
    color_jitter: tuple[float, float] = (0.8, 1.2)
    saturation: tuple[float, float] = (0.5, 1.5)
    sharpen: tuple[float, float] = (0.5, 2.0)
    blur: tuple[float, float] = (0.5, 1.5)
    noise: tuple[float, float] = (5.0, 15.0)
    shuffle_tile: int = 4
    pixelization: tuple[int, ...] = (2, 3, 4)
    hue_mild: tuple[float, float] = (-30.0, 30.0)
    # probability of drawing a full-circle hue rotation instead of a mild one
    hue_full_prob: float = 0.5

    @classmethod
    def from_json(cls, obj: dict) -> "ChainRanges":
        known = {f: getattr(cls, "__dataclass_fields__")[f] for f in cls.__dataclass_fields__}
        kwargs = {}
        for key, value in obj.items():
            if key not in known:
                raise ValidationError(f"unknown chain range field {key!r}")
            if key == "shuffle_tile":
                kwargs[key] = int(value)
            elif key == "hue_full_prob":
                kwargs[key] = float(value)
            elif key == "pixelization":
                kwargs[key] = tuple(int(v) for v in value)
            else:
                kwargs[key] = tuple(float(v) for v in value)
        return cls(**kwargs)


DEFAULT_RANGES = ChainRanges()


def _stream(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed) & _SEED_MASK]
                                 + [int(k) & _SEED_MASK for k in key])


def _draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2 ** 63, dtype=np.uint64))


def sample_chain(rng: np.random.Generator, ranges: ChainRanges = DEFAULT_RANGES) -> ChainSpec:
    """Draw one chain: a uniform member of each family with parameters from
    the configured ranges. The draw order is fixed, so one generator state
    maps to exactly one chain."""
    color_pick = int(rng.integers(0, 4))
    if color_pick == 0:
        color: PixelTransform = Brightness(float(rng.uniform(*ranges.brightness)))
    elif color_pick == 1:
        color = ColorJitter(tuple(float(rng.uniform(*ranges.color_jitter)) for _ in range(3)))
    elif color_pick == 2:
        color = Saturation(float(rng.uniform(*ranges.saturation)))
    else:
        color = Sharpen(float(rng.uniform(*ranges.sharpen)))
    quality_pick = int(rng.integers(0, 4))
    if quality_pick == 0:
        quality: PixelTransform = Blur(float(rng.uniform(*ranges.blur)))
    elif quality_pick == 1:
        quality = Noise(float(rng.uniform(*ranges.noise)), _draw_seed(rng))
    elif quality_pick == 2:
        quality = ShufflePixels(ranges.shuffle_tile, _draw_seed(rng))
    else:
        quality = Pixelization(int(ranges.pixelization[int(rng.integers(0, len(ranges.pixelization)))]))
    filt = Filter(FILTER_KINDS[int(rng.integers(0, len(FILTER_KINDS)))])
    if float(rng.random()) < ranges.hue_full_prob:
        hue = Hue(float(rng.uniform(0.0, 360.0)))
    else:
        hue = Hue(float(rng.uniform(*ranges.hue_mild)))
    return ChainSpec(color, quality, filt, hue).validate()


def augment_one(img: np.ndarray, anns: list[Annotation],
                chain: ChainSpec) -> tuple[np.ndarray, list[Annotation]]:
    """Apply the four stages in order; all stages are pixel-only, so the
    annotations come back geometrically identical."""
    chain.validate()
    out = img
    for stage in chain.stages():
        out = apply_pixel_transform(out, stage)
    return out, [copy_annotation(a) for a in anns]


def _variant_name(file_name: str, variant: int, suffix: str = "aug") -> str:
    return f"{Path(file_name).stem}_{suffix}{variant}.png"


def _render_offline(src: Path, rec: ImageRecord, variant: int, master_seed: int,
                    ranges: ChainRanges, out_dir: Path) -> tuple[str, ChainSpec]:
    rng = _stream(master_seed, 0, rec.id, variant)
    chain = sample_chain(rng, ranges)
    img = load_image(src)
    if img.shape[:2] != (rec.height, rec.width):
        raise ValidationError(f"image {rec.id} file is {img.shape[1]}x{img.shape[0]}, "
                              f"record says {rec.width}x{rec.height}")
    for stage in chain.stages():
        img = apply_pixel_transform(img, stage)
    name = _variant_name(rec.file_name, variant)
    save_png(img, out_dir / name)
    return name, chain


def run_offline(dataset: CocoDataset, image_dir, out_dir, variants: int,
                master_seed: int, ranges: ChainRanges | None = None,
                workers: int = 1) -> tuple[CocoDataset, AugManifest]:
    """Render `variants` chain-augmented copies of every image into out_dir
    (originals are copied over as well), returning the merged dataset of
    (1 + variants) x |images| records and the chain manifest. Augmented image
    ids are source_id * 1000 + variant; annotation ids are reassigned
    sequentially after the existing maximum."""
    dataset.validate()
    if variants < 0:
        raise ValidationError(f"variants must be non-negative, got {variants}")
    if variants >= _ID_STRIDE:
        raise ValidationError(f"variants must stay below {_ID_STRIDE} for the id scheme")
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    ranges = ranges or DEFAULT_RANGES
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sources = {}
    for rec in dataset.images:
        src = image_dir / rec.file_name
        if not src.is_file():
            raise FileNotFoundError(f"missing image file: {src}")
        sources[rec.id] = src

    tasks = [(rec, v) for rec in dataset.images for v in range(1, variants + 1)]
    results: dict[tuple[int, int], tuple[str, ChainSpec]] = {}

    def _run(task):
        rec, v = task
        return (rec.id, v), _render_offline(sources[rec.id], rec, v, master_seed,
                                            ranges, out_dir)

    if workers == 1 or not tasks:
        for task in tasks:
            key, value = _run(task)
            results[key] = value
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, value in pool.map(_run, tasks):
                results[key] = value

    out_paths = set()
    for rec in dataset.images:
        dst = out_dir / rec.file_name
        if dst.resolve() != sources[rec.id].resolve():
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(sources[rec.id], dst)
        out_paths.add(str(rec.file_name))

    by_image: dict[int, list[Annotation]] = {rec.id: [] for rec in dataset.images}
    for ann in dataset.annotations:
        by_image[ann.image_id].append(ann)

    images = list(dataset.images)
    annotations = [copy_annotation(a) for a in dataset.annotations]
    next_ann_id = max((a.id for a in dataset.annotations), default=0) + 1
    entries = []
    for rec in dataset.images:
        for v in range(1, variants + 1):
            name, chain = results[(rec.id, v)]
            if name in out_paths:
                raise ValidationError(f"output file name collision: {name}")
            out_paths.add(name)
            new_id = rec.id * _ID_STRIDE + v
            images.append(ImageRecord(new_id, name, rec.width, rec.height))
            for ann in by_image[rec.id]:
                dup = copy_annotation(ann)
                dup.id = next_ann_id
                dup.image_id = new_id
                annotations.append(dup)
                next_ann_id += 1
            entries.append(ManifestEntry(rec.id, v, chain, name))

    entries.sort(key=lambda e: (e.source_image_id, e.variant_index))
    merged = CocoDataset(images, annotations, list(dataset.categories),
                         dict(dataset.extra)).validate()
    manifest = AugManifest(master_seed, entries).validate()
    logger.info("offline augmentation: %d sources -> %d images, %d annotations",
                len(dataset.images), len(merged.images), len(merged.annotations))
    return merged, manifest


# ---------------------------------------------------------------------------
# online streaming mode


@dataclass(frozen=True)
class OnlineConfig:
    flip_prob: float = 0.5
    crop: CropConfig = CropConfig(1920, 1440, 0.25)
    jitter: JitterConfig = JitterConfig(0.1)
    gridmask_unit: int = 64
    gridmask_ratio: float = 0.5
    gridmask_fill: tuple[int, int, int] = (0, 0, 0)

    def validate(self) -> "OnlineConfig":
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValidationError(f"flip probability must lie in [0, 1], got {self.flip_prob}")
        self.crop.validate()
        self.jitter.validate()
        if self.gridmask_unit < 2:
            raise ValidationError("grid-mask unit must be >= 2")
        if not (0.0 < self.gridmask_ratio < 1.0):
            raise ValidationError("grid-mask ratio must lie in (0, 1)")
        return self

    @classmethod
    def from_json(cls, obj: dict) -> "OnlineConfig":
        kwargs = {}
        for key, value in obj.items():
            if key == "flip_prob":
                kwargs["flip_prob"] = float(value)
            elif key == "crop":
                kwargs["crop"] = CropConfig(int(value["target_w"]), int(value["target_h"]),
                                            float(value.get("min_visibility", 0.25)))
            elif key == "jitter":
                kwargs["jitter"] = JitterConfig(float(value["magnitude"]))
            elif key == "gridmask":
                kwargs["gridmask_unit"] = int(value.get("unit", 64))
                kwargs["gridmask_ratio"] = float(value.get("ratio", 0.5))
                kwargs["gridmask_fill"] = tuple(int(v) for v in value.get("fill", (0, 0, 0)))
            else:
                raise ValidationError(f"unknown online config field {key!r}")
        return cls(**kwargs).validate()


DEFAULT_ONLINE = OnlineConfig()


def _online_plan(rec: ImageRecord, ops: list[str], cfg: OnlineConfig,
                 rng: np.random.Generator) -> list[dict]:
    """Sample the concrete parameters for one (image, epoch) pass; the plan is
    self-describing and replayable."""
    plan = []
    width, height = rec.width, rec.height
    for op in ops:
        if op == "flip":
            plan.append({"op": "flip", "applied": bool(rng.random() < cfg.flip_prob)})
        elif op == "crop":
            tw, th = cfg.crop.target_w, cfg.crop.target_h
            x0 = int(rng.integers(0, max(width, tw) - tw + 1))
            y0 = int(rng.integers(0, max(height, th) - th + 1))
            plan.append({"op": "crop", "x": x0, "y": y0, "target_w": tw, "target_h": th,
                         "min_visibility": cfg.crop.min_visibility})
            width, height = tw, th
        elif op == "jitter":
            plan.append({"op": "jitter", "magnitude": cfg.jitter.magnitude,
                         "seed": _draw_seed(rng)})
        elif op == "gridmask":
            plan.append({"op": "gridmask", "unit": cfg.gridmask_unit,
                         "ratio": cfg.gridmask_ratio,
                         "offset_x": int(rng.integers(0, cfg.gridmask_unit)),
                         "offset_y": int(rng.integers(0, cfg.gridmask_unit)),
                         "fill": list(cfg.gridmask_fill)})
        else:
            raise ValidationError(f"unknown online op {op!r}; expected one of {ONLINE_OPS}")
    return plan


def _apply_plan(img: np.ndarray, anns: list[Annotation],
                plan: list[dict]) -> tuple[np.ndarray, list[Annotation]]:
    for step in plan:
        if step["op"] == "flip":
            if step["applied"]:
                img, anns = hflip(img, anns)
        elif step["op"] == "crop":
            img, anns = crop_at(img, anns, step["x"], step["y"],
                                CropConfig(step["target_w"], step["target_h"],
                                           step["min_visibility"]))
        elif step["op"] == "jitter":
            anns = bbox_jitter(anns, img.shape[1], img.shape[0],
                               JitterConfig(step["magnitude"]), step["seed"])
        elif step["op"] == "gridmask":
            img = grid_mask(img, GridMaskConfig(step["unit"], step["ratio"],
                                                step["offset_x"], step["offset_y"],
                                                tuple(step["fill"])))
    return img, anns


def run_online(dataset: CocoDataset, image_dir, out_dir, ops: list[str], epochs: int,
               master_seed: int, cfg: OnlineConfig | None = None,
               workers: int = 1) -> tuple[CocoDataset, dict]:
    """Streaming mode: emit one augmented copy of every image per epoch, with
    the requested ops applied in the given order and annotations kept
    consistent. Originals are not included in the output dataset."""
    dataset.validate()
    cfg = (cfg or DEFAULT_ONLINE).validate()
    if not ops:
        raise ValidationError("online mode needs at least one op")
    for op in ops:
        if op not in ONLINE_OPS:
            raise ValidationError(f"unknown online op {op!r}; expected one of {ONLINE_OPS}")
    if epochs < 1 or epochs >= _ID_STRIDE:
        raise ValidationError(f"epochs must lie in [1, {_ID_STRIDE}), got {epochs}")
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sources = {}
    for rec in dataset.images:
        src = image_dir / rec.file_name
        if not src.is_file():
            raise FileNotFoundError(f"missing image file: {src}")
        sources[rec.id] = src

    by_image: dict[int, list[Annotation]] = {rec.id: [] for rec in dataset.images}
    for ann in dataset.annotations:
        by_image[ann.image_id].append(ann)

    tasks = [(rec, epoch) for rec in dataset.images for epoch in range(1, epochs + 1)]

    def _run(task):
        rec, epoch = task
        rng = _stream(master_seed, 1, rec.id, epoch)
        plan = _online_plan(rec, list(ops), cfg, rng)
        img = load_image(sources[rec.id])
        anns = [copy_annotation(a) for a in by_image[rec.id]]
        img, anns = _apply_plan(img, anns, plan)
        name = _variant_name(rec.file_name, epoch, suffix="ep")
        save_png(img, out_dir / name)
        return (rec.id, epoch), (name, plan, img.shape[1], img.shape[0], anns)

    results: dict[tuple[int, int], tuple] = {}
    if workers == 1 or not tasks:
        for task in tasks:
            key, value = _run(task)
            results[key] = value
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, value in pool.map(_run, tasks):
                results[key] = value

    images, annotations, entries = [], [], []
    next_ann_id = 1
    for rec in dataset.images:
        for epoch in range(1, epochs + 1):
            name, plan, width, height, anns = results[(rec.id, epoch)]
            new_id = rec.id * _ID_STRIDE + epoch
            images.append(ImageRecord(new_id, name, width, height))
            for ann in anns:
                ann.id = next_ann_id
                ann.image_id = new_id
                annotations.append(ann)
                next_ann_id += 1
            entries.append({"source_image_id": rec.id, "epoch": epoch,
                            "output_file_name": name, "applied": plan})
    out_set = CocoDataset(images, annotations, list(dataset.categories)).validate()
    manifest = {"master_seed": master_seed, "mode": "online", "epochs": epochs,
                "ops": list(ops), "entries": entries}
    logger.info("online augmentation: %d sources x %d epochs -> %d images",
                len(dataset.images), epochs, len(images))
    return out_set, manifest
