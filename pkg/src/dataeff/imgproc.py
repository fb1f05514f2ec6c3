"""Deterministic pixel-level transforms on 8-bit RGB rasters.

Images are numpy uint8 arrays of shape (height, width, 3). Every transform
preserves dimensions, clamps to [0, 255], and is a pure function of
(image, spec), including any seed carried inside the spec. Intermediate
arithmetic is floating point; the final quantization rounds half away from
zero before clamping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .errors import ValidationError

_SEED_MASK = 0xFFFFFFFFFFFFFFFF

FILTER_KINDS = ("detail", "edge_enhance", "smooth", "median", "mode")

# pinned 3x3 kernels; each sums to 1 so uniform rasters are fixed points
_KERNELS = {
    "smooth": np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0,
    "detail": np.array([[0, -1, 0], [-1, 10, -1], [0, -1, 0]], dtype=np.float64) / 6.0,
    "edge_enhance": np.array([[-1, -1, -1], [-1, 10, -1], [-1, -1, -1]], dtype=np.float64) / 2.0,
}

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class Brightness:
    factor: float


@dataclass(frozen=True)
class ColorJitter:
    gains: tuple[float, float, float]


@dataclass(frozen=True)
class Saturation:
    factor: float


@dataclass(frozen=True)
class Sharpen:
    amount: float


@dataclass(frozen=True)
class Blur:
    sigma: float


@dataclass(frozen=True)
class Noise:
    sigma: float
    seed: int


@dataclass(frozen=True)
class ShufflePixels:
    tile: int
    seed: int


@dataclass(frozen=True)
class Pixelization:
    factor: int


@dataclass(frozen=True)
class Filter:
    kind: str


@dataclass(frozen=True)
class Hue:
    delta_degrees: float


PixelTransform = Union[Brightness, ColorJitter, Saturation, Sharpen, Blur, Noise,
                       ShufflePixels, Pixelization, Filter, Hue]

COLOR_FAMILY = (Brightness, ColorJitter, Saturation, Sharpen)
QUALITY_FAMILY = (Blur, Noise, ShufflePixels, Pixelization)


def ensure_image(img: np.ndarray) -> np.ndarray:
    if (not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3
            or img.dtype != np.uint8):
        raise ValidationError("image must be an (h, w, 3) uint8 array")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError("image must have positive dimensions")
    return img


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    # round half away from zero, then clamp; negatives clamp to 0 either way.
    # Quantizes in place: callers always pass a float temporary they own.
    arr += 0.5
    np.floor(arr, out=arr)
    np.clip(arr, 0.0, 255.0, out=arr)
    return arr.astype(np.uint8)


def _as_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64)


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & _SEED_MASK)


# ---------------------------------------------------------------------------
# color family


def apply_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    ensure_image(img)
    if not (factor > 0 and math.isfinite(factor)):
        raise ValidationError(f"brightness factor must be positive, got {factor}")
    return _to_uint8(_as_float(img) * factor)


def apply_color_jitter(img: np.ndarray, gains) -> np.ndarray:
    ensure_image(img)
    gains = tuple(float(g) for g in gains)
    if len(gains) != 3 or not all(g > 0 and math.isfinite(g) for g in gains):
        raise ValidationError(f"color jitter needs three positive gains, got {gains}")
    return _to_uint8(_as_float(img) * np.asarray(gains))


def apply_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    """Blend each channel against the pixel's luma: factor 0 is exact
    grayscale, 1 is the identity."""
    ensure_image(img)
    if not (factor >= 0 and math.isfinite(factor)):
        raise ValidationError(f"saturation factor must be non-negative, got {factor}")
    f = _as_float(img)
    luma = f @ _LUMA
    return _to_uint8(luma[..., None] + factor * (f - luma[..., None]))


def apply_sharpen(img: np.ndarray, amount: float) -> np.ndarray:
    """Unsharp masking against a sigma-1.0 Gaussian blur."""
    ensure_image(img)
    if not (amount >= 0 and math.isfinite(amount)):
        raise ValidationError(f"sharpen amount must be non-negative, got {amount}")
    f = _as_float(img)
    return _to_uint8(f + amount * (f - _gaussian_blur_float(f, 1.0)))


# ---------------------------------------------------------------------------
# quality family


def _gaussian_taps(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def _conv_axis(arr: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    radius = len(taps) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    out = np.zeros_like(arr)
    index = [slice(None)] * arr.ndim
    for i, tap in enumerate(taps):
        index[axis] = slice(i, i + arr.shape[axis])
        out += tap * padded[tuple(index)]
    return out


def _gaussian_blur_float(f: np.ndarray, sigma: float) -> np.ndarray:
    taps = _gaussian_taps(sigma)
    return _conv_axis(_conv_axis(f, taps, 0), taps, 1)


def apply_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, taps out to radius ceil(3 sigma), edges
    replicated. sigma 0 is a bit-exact no-op."""
    ensure_image(img)
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ValidationError(f"blur sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return img.copy()
    return _to_uint8(_gaussian_blur_float(_as_float(img), sigma))


def apply_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Additive zero-mean Gaussian noise per channel, deterministic in
    (image, sigma, seed)."""
    ensure_image(img)
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ValidationError(f"noise sigma must be non-negative, got {sigma}")
    noise = _rng(seed).normal(0.0, sigma, size=img.shape)
    return _to_uint8(_as_float(img) + noise)


def apply_shuffle_pixels(img: np.ndarray, tile: int, seed: int) -> np.ndarray:
    """Permute the pixels inside each tile x tile block (edge blocks are
    smaller); blocks are visited row-major with one seeded stream."""
    ensure_image(img)
    if not isinstance(tile, int) or tile < 2:
        raise ValidationError(f"shuffle tile must be an integer >= 2, got {tile}")
    rng = _rng(seed)
    out = img.copy()
    h, w = img.shape[:2]
    for by in range(0, h, tile):
        for bx in range(0, w, tile):
            block = out[by:by + tile, bx:bx + tile]
            bh, bw = block.shape[:2]
            perm = rng.permutation(bh * bw)
            block[...] = block.reshape(bh * bw, 3)[perm].reshape(bh, bw, 3)
    return out


def apply_pixelization(img: np.ndarray, factor: int) -> np.ndarray:
    """Replace each factor x factor block (edge blocks may be smaller) with
    its rounded per-channel mean."""
    ensure_image(img)
    if not isinstance(factor, int) or factor < 1:
        raise ValidationError(f"pixelization factor must be an integer >= 1, got {factor}")
    if factor == 1:
        return img.copy()
    h, w = img.shape[:2]
    ys = np.array(list(range(0, h, factor)) + [h])
    xs = np.array(list(range(0, w, factor)) + [w])
    integral = np.zeros((h + 1, w + 1, 3), dtype=np.float64)
    integral[1:, 1:] = _as_float(img).cumsum(axis=0).cumsum(axis=1)
    sums = (integral[ys[1:]][:, xs[1:]] - integral[ys[:-1]][:, xs[1:]]
            - integral[ys[1:]][:, xs[:-1]] + integral[ys[:-1]][:, xs[:-1]])
    counts = np.diff(ys)[:, None] * np.diff(xs)[None, :]
    means = _to_uint8(sums / counts[..., None])
    return np.repeat(np.repeat(means, np.diff(ys), axis=0), np.diff(xs), axis=1)


# ---------------------------------------------------------------------------
# filter family


def _shifted_stack(img: np.ndarray) -> np.ndarray:
    # 3x3 neighborhoods via edge-replicated shifts: shape (9, h, w, 3)
    h, w = img.shape[:2]
    padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    return np.stack([padded[dy:dy + h, dx:dx + w]
                     for dy in range(3) for dx in range(3)])


def apply_filter(img: np.ndarray, kind: str) -> np.ndarray:
    """Fixed 3x3 filters: detail/edge_enhance/smooth are convolutions,
    median/mode are rank filters; borders use edge replication. Mode ties
    break toward the smallest channel value."""
    ensure_image(img)
    if kind not in FILTER_KINDS:
        raise ValidationError(f"unknown filter kind {kind!r}; expected one of {FILTER_KINDS}")
    if kind in _KERNELS:
        taps = _KERNELS[kind]
        h, w = img.shape[:2]
        padded = np.pad(_as_float(img), ((1, 1), (1, 1), (0, 0)), mode="edge")
        out = np.zeros((h, w, 3), dtype=np.float64)
        scratch = np.empty_like(out)
        for i in range(3):
            for j in range(3):
                if taps[i, j] != 0.0:
                    np.multiply(padded[i:i + h, j:j + w], taps[i, j], out=scratch)
                    out += scratch
        return _to_uint8(out)
    stack = _shifted_stack(img)
    if kind == "median":
        return np.median(stack, axis=0).astype(np.uint8)
    sorted_stack = np.sort(stack, axis=0)
    best_val = sorted_stack[0].copy()
    best_len = np.ones(best_val.shape, dtype=np.int8)
    run_len = np.ones(best_val.shape, dtype=np.int8)
    for k in range(1, 9):
        same = sorted_stack[k] == sorted_stack[k - 1]
        run_len = np.where(same, run_len + 1, 1).astype(np.int8)
        better = run_len > best_len
        best_len = np.where(better, run_len, best_len)
        best_val = np.where(better, sorted_stack[k], best_val)
    return best_val


# ---------------------------------------------------------------------------
# hue


def apply_hue(img: np.ndarray, delta_degrees: float) -> np.ndarray:
    """Rotate hue by delta degrees in HSV space; saturation and value are
    untouched. Rotations that are multiples of 360 are bit-exact no-ops."""
    ensure_image(img)
    if not math.isfinite(delta_degrees):
        raise ValidationError("hue delta must be finite")
    delta = float(delta_degrees) % 360.0
    if delta == 0.0:
        return img.copy()
    f = _as_float(img)
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    mx = f.max(axis=2)
    chroma = mx - f.min(axis=2)
    safe = np.where(chroma > 0, chroma, 1.0)
    # hue measured in 60-degree sextants, [0, 6)
    hue = np.select(
        [chroma == 0, mx == r, mx == g],
        [0.0, np.mod((g - b) / safe, 6.0), (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0,
    )
    hue = np.mod(hue + delta / 60.0, 6.0)
    out = np.empty_like(f)
    for ch, n in ((0, 5.0), (1, 3.0), (2, 1.0)):
        k = np.mod(n + hue, 6.0)
        np.minimum(k, 4.0 - k, out=k)
        np.clip(k, 0.0, 1.0, out=k)
        # value minus chroma scaled by the sextant profile
        k *= chroma
        np.subtract(mx, k, out=out[..., ch])
    return _to_uint8(out)


# ---------------------------------------------------------------------------
# dispatch and spec (de)serialization


def apply_pixel_transform(img: np.ndarray, spec: PixelTransform) -> np.ndarray:
    """Apply one transform spec; validates parameter bounds and preserves
    dimensions."""
    if isinstance(spec, Brightness):
        return apply_brightness(img, spec.factor)
    if isinstance(spec, ColorJitter):
        return apply_color_jitter(img, spec.gains)
    if isinstance(spec, Saturation):
        return apply_saturation(img, spec.factor)
    if isinstance(spec, Sharpen):
        return apply_sharpen(img, spec.amount)
    if isinstance(spec, Blur):
        return apply_blur(img, spec.sigma)
    if isinstance(spec, Noise):
        return apply_noise(img, spec.sigma, spec.seed)
    if isinstance(spec, ShufflePixels):
        return apply_shuffle_pixels(img, spec.tile, spec.seed)
    if isinstance(spec, Pixelization):
        return apply_pixelization(img, spec.factor)
    if isinstance(spec, Filter):
        return apply_filter(img, spec.kind)
    if isinstance(spec, Hue):
        return apply_hue(img, spec.delta_degrees)
    raise ValidationError(f"unknown transform spec {spec!r}")


_KIND_NAMES = {
    Brightness: "brightness",
    ColorJitter: "color_jitter",
    Saturation: "saturation",
    Sharpen: "sharpen",
    Blur: "blur",
    Noise: "noise",
    ShufflePixels: "shuffle_pixels",
    Pixelization: "pixelization",
    Filter: "filter",
    Hue: "hue",
}


def transform_to_json(spec: PixelTransform) -> dict:
    kind = _KIND_NAMES.get(type(spec))
    if kind is None:
        raise ValidationError(f"unknown transform spec {spec!r}")
    if isinstance(spec, Brightness):
        return {"kind": kind, "factor": spec.factor}
    if isinstance(spec, ColorJitter):
        return {"kind": kind, "gains": list(spec.gains)}
    if isinstance(spec, Saturation):
        return {"kind": kind, "factor": spec.factor}
    if isinstance(spec, Sharpen):
        return {"kind": kind, "amount": spec.amount}
    if isinstance(spec, Blur):
        return {"kind": kind, "sigma": spec.sigma}
    if isinstance(spec, Noise):
        return {"kind": kind, "sigma": spec.sigma, "seed": spec.seed}
    if isinstance(spec, ShufflePixels):
        return {"kind": kind, "tile": spec.tile, "seed": spec.seed}
    if isinstance(spec, Pixelization):
        return {"kind": kind, "factor": spec.factor}
    if isinstance(spec, Filter):
        return {"kind": kind, "name": spec.kind}
    return {"kind": kind, "delta_degrees": spec.delta_degrees}


def transform_from_json(obj: dict) -> PixelTransform:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValidationError(f"transform spec must be an object with a 'kind': {obj!r}")
    kind = obj["kind"]
    try:
        if kind == "brightness":
            return Brightness(float(obj["factor"]))
        if kind == "color_jitter":
            return ColorJitter(tuple(float(g) for g in obj["gains"]))
        if kind == "saturation":
            return Saturation(float(obj["factor"]))
        if kind == "sharpen":
            return Sharpen(float(obj["amount"]))
        if kind == "blur":
            return Blur(float(obj["sigma"]))
        if kind == "noise":
            return Noise(float(obj["sigma"]), int(obj["seed"]))
        if kind == "shuffle_pixels":
            return ShufflePixels(int(obj["tile"]), int(obj["seed"]))
        if kind == "pixelization":
            return Pixelization(int(obj["factor"]))
        if kind == "filter":
            return Filter(str(obj["name"]))
        if kind == "hue":
            return Hue(float(obj["delta_degrees"]))
    except KeyError as exc:
        raise ValidationError(f"transform spec {kind!r} missing field {exc}") from exc
    raise ValidationError(f"unknown transform kind {kind!r}")


# ---------------------------------------------------------------------------
# image file I/O


def load_image(path) -> np.ndarray:
    """Read a PNG or JPEG file as an (h, w, 3) uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(img: np.ndarray, path) -> None:
    """Write a lossless 8-bit RGB PNG."""
    ensure_image(img)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, "RGB").save(path, format="PNG")
