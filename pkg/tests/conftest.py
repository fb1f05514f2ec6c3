import json

import numpy as np
import pytest

from dataeff import (Annotation, Category, CocoDataset, ImageRecord, bbox_from_mask,
                     rle_encode, save_png, serialize_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_image(rng, width, height):
    return rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)


def random_blob_mask(rng, height, width):
    """Random non-empty mask made of a few filled rectangles."""
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        y0 = int(rng.integers(0, height))
        x0 = int(rng.integers(0, width))
        y1 = int(rng.integers(y0, height)) + 1
        x1 = int(rng.integers(x0, width)) + 1
        mask[y0:y1, x0:x1] = True
    return mask


def mask_annotation(rng, ann_id, image_id, category_id, height, width):
    """Annotation whose RLE mask, tight box, and area are mutually consistent."""
    mask = random_blob_mask(rng, height, width)
    return Annotation(
        id=ann_id,
        image_id=image_id,
        category_id=category_id,
        bbox=bbox_from_mask(mask),
        segmentation=rle_encode(mask),
        area=float(mask.sum()),
    )


def build_dataset(rng, n_images=2, n_categories=2, anns_per_image=2,
                  width=24, height=18):
    images, annotations = [], []
    ann_id = 1
    for i in range(1, n_images + 1):
        images.append(ImageRecord(i, f"img_{i:03d}.png", width, height))
        for _ in range(anns_per_image):
            cat = int(rng.integers(1, n_categories + 1))
            annotations.append(mask_annotation(rng, ann_id, i, cat, height, width))
            ann_id += 1
    categories = [Category(c, f"cat{c}") for c in range(1, n_categories + 1)]
    return CocoDataset(images, annotations, categories).validate()


def write_dataset_tree(dataset, rng, root):
    """Materialize a dataset: PNG files plus annotations.json under root."""
    root.mkdir(parents=True, exist_ok=True)
    for rec in dataset.images:
        save_png(random_image(rng, rec.width, rec.height), root / rec.file_name)
    ann_path = root / "annotations.json"
    ann_path.write_bytes(serialize_dataset(dataset))
    return ann_path


@pytest.fixture
def tiny_dataset(rng):
    return build_dataset(rng)


@pytest.fixture
def dataset_tree(tmp_path, rng, tiny_dataset):
    ann_path = write_dataset_tree(tiny_dataset, rng, tmp_path / "src")
    return tiny_dataset, ann_path, tmp_path / "src"


def minimal_dataset_json(n_images=1, n_annotations=0, n_categories=1):
    obj = {
        "images": [{"id": i + 1, "file_name": f"im{i}.png", "width": 8, "height": 8}
                   for i in range(n_images)],
        "annotations": [
            {"id": i + 1, "image_id": 1, "category_id": 1,
             "bbox": [0, 0, 2, 2], "area": 4.0, "iscrowd": 0}
            for i in range(n_annotations)
        ],
        "categories": [{"id": i + 1, "name": f"c{i}"} for i in range(n_categories)],
    }
    return json.dumps(obj).encode()
