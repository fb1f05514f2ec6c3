"""Data-efficient instance-segmentation tooling: annotation-consistent
augmentation, detection postprocessing, checkpoint averaging, and
COCO-protocol AP evaluation."""

from .coco import (Annotation, BBox, Category, CocoDataset, Detection, ImageRecord, Rle,
                   annotation_mask, bbox_from_mask, parse_dataset, parse_detections,
                   polygons_to_mask, rle_decode, rle_encode, rle_from_string, rle_to_string,
                   serialize_dataset, serialize_detections)
from .errors import DataeffError, ParseError, ValidationError
from .evalap import (DEFAULT_IOU_THRESHOLDS, CategoryResult, EvalConfig, EvalResult,
                     average_precision, evaluate, match_detections)
from .geom import (CropConfig, GridMaskConfig, JitterConfig, bbox_jitter, crop_at, grid_mask,
                   hflip, random_crop)
from .imgproc import (Blur, Brightness, ColorJitter, Filter, Hue, Noise, Pixelization,
                      Saturation, Sharpen, ShufflePixels, apply_blur, apply_brightness,
                      apply_color_jitter, apply_filter, apply_hue, apply_noise,
                      apply_pixel_transform, apply_pixelization, apply_saturation,
                      apply_sharpen, apply_shuffle_pixels, load_image, save_png,
                      transform_from_json, transform_to_json)
from .pipeline import (AugManifest, ChainRanges, ChainSpec, ManifestEntry, OnlineConfig,
                       augment_one, run_offline, run_online, sample_chain)
from .postproc import (SoftNmsConfig, TtaView, backproject_view, box_iou, fuse_tta,
                       make_view, mask_iou, soft_nms, view_dims)
from .swa import Checkpoint, average_checkpoints, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Annotation", "AugManifest", "BBox", "Blur", "Brightness", "Category", "CategoryResult",
    "ChainRanges", "ChainSpec", "Checkpoint", "CocoDataset", "ColorJitter", "CropConfig",
    "DEFAULT_IOU_THRESHOLDS", "DataeffError", "Detection", "EvalConfig", "EvalResult",
    "Filter", "GridMaskConfig", "Hue", "ImageRecord", "JitterConfig", "ManifestEntry",
    "Noise", "OnlineConfig", "ParseError", "Pixelization", "Rle", "Saturation", "Sharpen",
    "ShufflePixels", "SoftNmsConfig", "TtaView", "ValidationError", "annotation_mask",
    "apply_blur", "apply_brightness", "apply_color_jitter", "apply_filter", "apply_hue",
    "apply_noise", "apply_pixel_transform", "apply_pixelization", "apply_saturation",
    "apply_sharpen", "apply_shuffle_pixels", "augment_one", "average_checkpoints",
    "average_precision", "backproject_view", "bbox_from_mask", "bbox_jitter", "box_iou",
    "crop_at", "evaluate", "fuse_tta", "grid_mask", "hflip", "load_checkpoint", "load_image",
    "make_view", "mask_iou", "match_detections", "parse_dataset", "parse_detections",
    "polygons_to_mask", "random_crop", "rle_decode", "rle_encode", "rle_from_string",
    "rle_to_string", "run_offline", "run_online", "sample_chain", "save_checkpoint",
    "save_png", "serialize_dataset", "serialize_detections", "soft_nms",
    "transform_from_json", "transform_to_json", "view_dims",
]
