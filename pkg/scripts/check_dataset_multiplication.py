#!/usr/bin/env python3
"""Verify the offline multiplication arithmetic at competition scale with
synthetic stand-in images: 184 sources -> 2024 images and 62 -> 682 at ten
variants each, plus byte-level determinism across worker counts.

Usage: python scripts/check_dataset_multiplication.py [workdir]
"""

import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from dataeff import (Annotation, Category, CocoDataset, ImageRecord, bbox_from_mask,
                     parse_dataset, rle_encode, save_png, serialize_dataset)
from dataeff.cli import dispatch


def synthesize(root: Path, n_images: int, rng) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    images, annotations = [], []
    for i in range(1, n_images + 1):
        img = rng.integers(0, 256, size=(6, 8, 3), dtype=np.uint8)
        name = f"im_{i:04d}.png"
        save_png(img, root / name)
        images.append(ImageRecord(i, name, 8, 6))
        mask = np.zeros((6, 8), bool)
        mask[1:4, 2:6] = True
        annotations.append(Annotation(i, i, 1, bbox_from_mask(mask), rle_encode(mask),
                                      float(mask.sum())))
    ds = CocoDataset(images, annotations, [Category(1, "obj")]).validate()
    ann_path = root / "annotations.json"
    ann_path.write_bytes(serialize_dataset(ds))
    return ann_path


def run(ann_path: Path, images: Path, out: Path, workers: int) -> int:
    code = dispatch(["augment", "--ann", str(ann_path), "--images", str(images),
                     "--out", str(out), "--variants", "10", "--seed", "7",
                     "--workers", str(workers)])
    if code != 0:
        raise SystemExit(f"augment failed with exit code {code}")
    merged = parse_dataset((out / "annotations.json").read_bytes())
    return len(merged.images)


def main():
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
    rng = np.random.default_rng(0)
    started = time.monotonic()
    for n_images, expected in ((184, 2024), (62, 682)):
        src = workdir / f"src_{n_images}"
        ann_path = synthesize(src, n_images, rng)
        total = run(ann_path, src, workdir / f"out_{n_images}", workers=4)
        status = "ok" if total == expected else "MISMATCH"
        print(f"{n_images:4d} sources x 10 variants -> {total} images "
              f"(expected {expected}): {status}")
        assert total == expected

    src = workdir / "src_det"
    ann_path = synthesize(src, 5, rng)
    runs = []
    for workers in (1, 4):
        out = workdir / f"det_w{workers}"
        run(ann_path, src, out, workers)
        listing = sorted(p for p in out.rglob("*") if p.is_file())
        runs.append({p.relative_to(out): p.read_bytes() for p in listing})
    assert runs[0] == runs[1]
    print("worker-count determinism: ok (byte-identical outputs for 1 and 4 workers)")
    print(f"elapsed: {time.monotonic() - started:.1f}s")


if __name__ == "__main__":
    main()
