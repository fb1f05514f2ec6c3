import numpy as np
import pytest

from dataeff import (Annotation, BBox, Category, CocoDataset, Detection, EvalConfig,
                     ImageRecord, ValidationError, average_precision, bbox_from_mask,
                     evaluate, match_detections, rle_encode)
from dataeff.evalap import DEFAULT_IOU_THRESHOLDS
from conftest import build_dataset, mask_annotation
from oracles import reference_evaluate


def gt_box(ann_id, box, image_id=1, cat=1, crowd=0):
    b = BBox(*box)
    return Annotation(ann_id, image_id, cat, b, None, b.w * b.h, crowd)


def det(score, box, image_id=1, cat=1, mask=None):
    return Detection(image_id, cat, BBox(*box), score, mask)


def perfect_detections(dataset, kind="box"):
    out = []
    for ann in dataset.annotations:
        if ann.iscrowd:
            continue
        mask = ann.segmentation if kind == "mask" else None
        out.append(Detection(ann.image_id, ann.category_id, ann.bbox, 1.0, mask))
    return out


class TestMatchDetections:
    def test_exact_match_at_every_threshold(self):
        gt = gt_box(1, (0, 0, 10, 10))
        for t in DEFAULT_IOU_THRESHOLDS:
            [(d, m)] = match_detections([det(0.9, (0, 0, 10, 10))], [gt], t)
            assert m is gt

    def test_iou_06_threshold_boundary(self):
        gt = gt_box(1, (0, 0, 10, 10))
        d = det(0.9, (0, 0, 10, 6))
        for t in (0.50, 0.55, 0.60):
            assert match_detections([d], [gt], t)[0][1] is gt
        for t in (0.65, 0.70, 0.95):
            assert match_detections([d], [gt], t)[0][1] is None

    def test_greedy_order(self):
        gt = gt_box(1, (0, 0, 10, 10))
        first = det(0.9, (0, 0, 10, 9))
        second = det(0.8, (0, 0, 10, 10))
        pairs = match_detections([first, second], [gt], 0.5)
        assert pairs[0][1] is gt and pairs[1][1] is None

    def test_iou_tie_prefers_lower_gt_id(self):
        gts = [gt_box(7, (0, 0, 10, 10)), gt_box(3, (10, 0, 10, 10))]
        d = det(0.9, (5, 0, 10, 10))  # straddles both with equal IoU
        [(_, m)] = match_detections([d], gts, 0.01)
        assert m.id == 3

    def test_crowd_absorbs_and_is_reusable(self):
        crowd = gt_box(1, (0, 0, 50, 50), crowd=1)
        dets = [det(0.9, (0, 0, 10, 10)), det(0.8, (20, 20, 10, 10))]
        pairs = match_detections(dets, [crowd], 0.5)
        assert all(m is crowd for _, m in pairs)

    def test_regular_match_preferred_over_crowd(self):
        crowd = gt_box(1, (0, 0, 50, 50), crowd=1)
        regular = gt_box(2, (0, 0, 10, 10))
        [(_, m)] = match_detections([det(0.9, (0, 0, 10, 10))], [crowd, regular], 0.5)
        assert m is regular

    def test_unsorted_rejected(self):
        gts = [gt_box(1, (0, 0, 5, 5))]
        with pytest.raises(ValidationError, match="sorted"):
            match_detections([det(0.5, (0, 0, 5, 5)), det(0.9, (0, 0, 5, 5))], gts, 0.5)

    def test_mask_kind(self, rng):
        mask = np.zeros((16, 16), bool)
        mask[2:10, 3:12] = True
        ann = Annotation(1, 1, 1, bbox_from_mask(mask), rle_encode(mask),
                         float(mask.sum()))
        d = det(0.9, tuple(ann.bbox), mask=rle_encode(mask))
        [(_, m)] = match_detections([d], [ann], 0.95, kind="mask", image_size=(16, 16))
        assert m is ann


class TestAveragePrecision:
    def test_all_matched_no_fp(self):
        assert average_precision([(0.9, True), (0.8, True)], 2) == 1.0

    def test_no_detections(self):
        assert average_precision([], 3) == 0.0

    def test_no_ground_truth_is_skip(self):
        assert average_precision([(0.9, False)], 0) is None

    def test_tp_then_fp(self):
        assert average_precision([(0.9, True), (0.8, False)], 1) == 1.0

    def test_fp_then_tp(self):
        assert average_precision([(0.9, False), (0.8, True)], 1) == pytest.approx(0.5)

    def test_recall_points_density(self):
        records = [(0.9, True), (0.8, False), (0.7, True)]
        coarse = average_precision(records, 4, recall_points=11)
        fine = average_precision(records, 4, recall_points=101)
        assert 0.0 <= coarse <= 1.0 and 0.0 <= fine <= 1.0


def micro_instance(seed, kind):
    rng = np.random.default_rng(seed)
    n_images = int(rng.integers(1, 4))
    size = 20
    images = [ImageRecord(i, f"im{i}.png", size, size) for i in range(1, n_images + 1)]
    categories = [Category(1, "a"), Category(2, "b")]
    anns = []
    ann_id = 1
    for img in images:
        for _ in range(int(rng.integers(0, 3))):
            ann = mask_annotation(rng, ann_id, img.id, int(rng.integers(1, 3)),
                                  size, size)
            ann.iscrowd = int(rng.random() < 0.15)
            anns.append(ann)
            ann_id += 1
    dataset = CocoDataset(images, anns, categories).validate()
    dets = []
    for img in images:
        for _ in range(int(rng.integers(0, 9))):
            mask = np.zeros((size, size), bool)
            y0, x0 = int(rng.integers(0, size - 4)), int(rng.integers(0, size - 4))
            mask[y0:y0 + int(rng.integers(2, 6)), x0:x0 + int(rng.integers(2, 6))] = True
            dets.append(Detection(img.id, int(rng.integers(1, 3)), bbox_from_mask(mask),
                                  float(rng.integers(1, 100)) / 100.0,
                                  rle_encode(mask) if kind == "mask" else None))
    return dataset, dets


class TestEvaluate:
    def test_perfect_predictions_box(self, rng):
        dataset = build_dataset(rng, n_images=3, anns_per_image=3)
        result = evaluate(dataset, perfect_detections(dataset), EvalConfig())
        assert result.mean_ap == 1.0
        assert all(v == 1.0 for v in result.ap_per_threshold.values())

    def test_perfect_predictions_mask(self, rng):
        dataset = build_dataset(rng, n_images=2, anns_per_image=2)
        result = evaluate(dataset, perfect_detections(dataset, "mask"),
                          EvalConfig(iou_kind="mask"))
        assert result.mean_ap == 1.0

    def test_empty_detections(self, rng):
        dataset = build_dataset(rng)
        result = evaluate(dataset, [], EvalConfig())
        assert result.mean_ap == 0.0

    def test_dangling_ids_rejected(self, rng):
        dataset = build_dataset(rng)
        with pytest.raises(ValidationError, match="image_id"):
            evaluate(dataset, [det(0.5, (0, 0, 2, 2), image_id=99)], EvalConfig())
        with pytest.raises(ValidationError, match="category_id"):
            evaluate(dataset, [det(0.5, (0, 0, 2, 2), image_id=1, cat=42)], EvalConfig())

    def test_category_without_gt_excluded(self):
        images = [ImageRecord(1, "a.png", 10, 10)]
        cats = [Category(1, "a"), Category(2, "empty")]
        anns = [gt_box(1, (0, 0, 5, 5))]
        dataset = CocoDataset(images, anns, cats).validate()
        result = evaluate(dataset, [det(1.0, (0, 0, 5, 5))], EvalConfig())
        assert result.mean_ap == 1.0
        assert set(result.per_category) == {1}

    def test_duplicates_make_one_tp(self):
        images = [ImageRecord(1, "a.png", 10, 10)]
        dataset = CocoDataset(images, [gt_box(1, (0, 0, 5, 5))],
                              [Category(1, "a")]).validate()
        dets = [det(1.0, (0, 0, 5, 5)), det(0.9, (0, 0, 5, 5)), det(0.8, (0, 0, 5, 5))]
        pairs = match_detections(dets, dataset.annotations, 0.5)
        assert [m is not None for _, m in pairs] == [True, False, False]

    def test_monotone_score_transform_invariance(self):
        dataset, dets = micro_instance(7, "box")
        base = evaluate(dataset, dets, EvalConfig())
        squeezed = [Detection(d.image_id, d.category_id, d.bbox, 0.25 + d.score / 2,
                              d.mask) for d in dets]
        assert evaluate(dataset, squeezed, EvalConfig()).mean_ap == base.mean_ap

    def test_ap_non_increasing_in_threshold(self):
        for seed in range(12):
            dataset, dets = micro_instance(seed, "box")
            result = evaluate(dataset, dets, EvalConfig())
            values = [result.ap_per_threshold[t] for t in DEFAULT_IOU_THRESHOLDS]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_low_score_addition_keeps_higher_matches(self):
        dataset, dets = micro_instance(3, "box")
        base = evaluate(dataset, dets, EvalConfig())
        lowest = min((d.score for d in dets), default=0.5)
        extra = dets + [det(lowest / 2, (0, 0, 3, 3),
                            image_id=dataset.images[0].id, cat=1)]
        for t in DEFAULT_IOU_THRESHOLDS:
            assert evaluate(dataset, extra, EvalConfig()).ap_per_threshold[t] <= \
                base.ap_per_threshold[t] + 1e-12

    @pytest.mark.parametrize("kind", ["box", "mask"])
    def test_matches_reference_evaluator(self, kind):
        for seed in range(25):
            dataset, dets = micro_instance(seed, kind)
            result = evaluate(dataset, dets, EvalConfig(iou_kind=kind))
            ref_mean, ref_t, _ = reference_evaluate(dataset, dets,
                                                    DEFAULT_IOU_THRESHOLDS, kind)
            assert result.mean_ap == pytest.approx(ref_mean, abs=1e-9)
            for t in DEFAULT_IOU_THRESHOLDS:
                assert result.ap_per_threshold[t] == pytest.approx(ref_t.get(t, 0.0),
                                                                   abs=1e-9)

    def test_mean_is_mean_of_thresholds(self):
        dataset, dets = micro_instance(11, "box")
        result = evaluate(dataset, dets, EvalConfig())
        assert result.mean_ap == pytest.approx(
            float(np.mean(list(result.ap_per_threshold.values()))), abs=1e-15)

    def test_crowd_only_match_does_not_count_as_fp(self):
        images = [ImageRecord(1, "a.png", 100, 100)]
        anns = [gt_box(1, (0, 0, 10, 10)),
                gt_box(2, (40, 40, 50, 50), crowd=1)]
        dataset = CocoDataset(images, anns, [Category(1, "a")]).validate()
        clean = [det(1.0, (0, 0, 10, 10))]
        with_crowd_hit = clean + [det(0.9, (45, 45, 20, 20))]
        a = evaluate(dataset, clean, EvalConfig())
        b = evaluate(dataset, with_crowd_hit, EvalConfig())
        assert a.mean_ap == b.mean_ap == 1.0

    def test_true_fp_does_lower_ap_when_recall_incomplete(self):
        images = [ImageRecord(1, "a.png", 100, 100)]
        anns = [gt_box(1, (0, 0, 10, 10)), gt_box(2, (60, 60, 10, 10))]
        dataset = CocoDataset(images, anns, [Category(1, "a")]).validate()
        partial = [det(1.0, (0, 0, 10, 10)), det(0.9, (30, 30, 5, 5))]
        result = evaluate(dataset, partial, EvalConfig())
        assert 0.0 < result.mean_ap < 1.0

    def test_polygon_gt_evaluated_as_mask(self):
        images = [ImageRecord(1, "a.png", 16, 16)]
        poly = [[2.0, 2.0, 10.0, 2.0, 10.0, 9.0, 2.0, 9.0]]
        anns = [Annotation(1, 1, 1, BBox(2, 2, 8, 7), poly, 56.0)]
        dataset = CocoDataset(images, anns, [Category(1, "a")]).validate()
        mask = np.zeros((16, 16), bool)
        mask[2:9, 2:10] = True
        matching = [Detection(1, 1, BBox(2, 2, 8, 7), 1.0, rle_encode(mask))]
        result = evaluate(dataset, matching, EvalConfig(iou_kind="mask"))
        assert result.mean_ap == 1.0

    def test_mask_kind_requires_det_mask(self, rng):
        images = [ImageRecord(1, "a.png", 16, 16)]
        ann = mask_annotation(rng, 1, 1, 1, 16, 16)
        dataset = CocoDataset(images, [ann], [Category(1, "a")]).validate()
        bare = [det(0.9, tuple(ann.bbox), image_id=1)]
        with pytest.raises(ValidationError, match="mask"):
            evaluate(dataset, bare, EvalConfig(iou_kind="mask"))

    def test_max_dets_cap_applies(self):
        images = [ImageRecord(1, "a.png", 100, 100)]
        anns = [gt_box(1, (0, 0, 10, 10))]
        dataset = CocoDataset(images, anns, [Category(1, "a")]).validate()
        # the true positive is ranked below max_dets noise detections
        noise = [det(0.9 - 0.01 * i, (50 + i, 50, 5, 5)) for i in range(3)]
        hit = [det(0.5, (0, 0, 10, 10))]
        capped = evaluate(dataset, noise + hit, EvalConfig(max_dets=3))
        uncapped = evaluate(dataset, noise + hit, EvalConfig(max_dets=100))
        assert capped.mean_ap == 0.0
        assert uncapped.mean_ap > 0.0
