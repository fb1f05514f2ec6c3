#!/usr/bin/env python3
"""End-to-end walkthrough on a synthetic toy dataset: offline augmentation,
soft-NMS, TTA fusion, AP evaluation, and checkpoint averaging.

Usage: python scripts/demo_pipeline.py [workdir]
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from dataeff import (Annotation, BBox, Category, CocoDataset, Detection, EvalConfig,
                     ImageRecord, SoftNmsConfig, average_checkpoints, bbox_from_mask,
                     evaluate, fuse_tta, make_view, rle_encode, run_offline,
                     save_checkpoint, save_png, serialize_dataset, soft_nms)


def make_toy_dataset(root: Path, rng, n_images=4, width=64, height=48):
    images, annotations = [], []
    ann_id = 1
    for i in range(1, n_images + 1):
        img = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        name = f"toy_{i:02d}.png"
        save_png(img, root / name)
        images.append(ImageRecord(i, name, width, height))
        for _ in range(2):
            mask = np.zeros((height, width), bool)
            y0, x0 = int(rng.integers(0, height - 12)), int(rng.integers(0, width - 16))
            mask[y0:y0 + int(rng.integers(6, 12)), x0:x0 + int(rng.integers(8, 16))] = True
            annotations.append(Annotation(ann_id, i, 1, bbox_from_mask(mask),
                                          rle_encode(mask), float(mask.sum())))
            ann_id += 1
    return CocoDataset(images, annotations, [Category(1, "blob")]).validate()


def noisy_detections(dataset, rng):
    """A pretend detector: ground truth with jittered scores plus duplicates."""
    dets = []
    for ann in dataset.annotations:
        dets.append(Detection(ann.image_id, 1, ann.bbox,
                              float(0.7 + 0.3 * rng.random()), ann.segmentation))
        b = ann.bbox
        dets.append(Detection(ann.image_id, 1,
                              BBox(b.x + 1, b.y + 1, b.w, b.h),
                              float(0.3 + 0.3 * rng.random()), ann.segmentation))
    return dets


def main():
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
    workdir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(7)

    src = workdir / "src"
    src.mkdir(exist_ok=True)
    dataset = make_toy_dataset(src, rng)
    (src / "annotations.json").write_bytes(serialize_dataset(dataset))
    print(f"toy dataset: {len(dataset.images)} images, "
          f"{len(dataset.annotations)} annotations -> {src}")

    merged, manifest = run_offline(dataset, src, workdir / "augmented", variants=10,
                                   master_seed=42, workers=4)
    print(f"offline x10: {len(merged.images)} images "
          f"({len(manifest.entries)} augmented variants)")

    dets = noisy_detections(dataset, rng)
    kept = []
    for image_id in sorted({d.image_id for d in dets}):
        kept.extend(soft_nms([d for d in dets if d.image_id == image_id],
                             SoftNmsConfig(method="gaussian", sigma=0.5)))
    print(f"soft-NMS: {len(dets)} detections in, {len(kept)} out")

    rec = dataset.images[0]
    per_image = [d for d in kept if d.image_id == rec.id]
    views = []
    for scale in (1.0, 0.8, 1.2):
        for flipped in (False, True):
            view = make_view(scale, flipped, rec.width, rec.height)
            forward = []
            for d in per_image:
                b = BBox(d.bbox.x * scale, d.bbox.y * scale,
                         d.bbox.w * scale, d.bbox.h * scale)
                if flipped:
                    b = BBox(view.view_width - b.x - b.w, b.y, b.w, b.h)
                forward.append(Detection(d.image_id, d.category_id, b, d.score))
            views.append((view, forward))
    fused = fuse_tta(views, SoftNmsConfig(), rec.width, rec.height)
    print(f"TTA fusion over 6 views of image {rec.id}: {len(fused)} detections")

    result = evaluate(dataset, kept, EvalConfig(iou_kind="box"))
    print(f"box AP over IoU 0.50:0.95 -> mean {result.mean_ap:.4f}")

    checkpoints = [{"backbone.w": rng.standard_normal((8, 4)),
                    "head.b": rng.standard_normal(6)} for _ in range(5)]
    for i, ck in enumerate(checkpoints):
        save_checkpoint(ck, workdir / f"snapshot_{i}.ckpt")
    averaged = average_checkpoints(checkpoints)
    save_checkpoint(averaged, workdir / "swa.ckpt")
    print(f"averaged {len(checkpoints)} checkpoints -> {workdir / 'swa.ckpt'}")

    report = {"images": len(merged.images), "mean_ap": result.mean_ap,
              "fused": len(fused)}
    (workdir / "demo_report.json").write_text(json.dumps(report, indent=2))
    print(f"report -> {workdir / 'demo_report.json'}")


if __name__ == "__main__":
    main()
