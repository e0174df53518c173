"""Stochastic synchronized RGB-D augmentation.

A :class:`Transform` is a fully-resolved draw: applying the same instance
twice gives identical outputs, and applying it to an RGB-D pair keeps the
two modalities geometrically aligned.

Pipeline order (fixed):

1. crop + resize to the network input size -- bilinear for RGB, nearest for
   depth, identical window for both;
2. horizontal flip (both modalities);
3. color jitter: brightness, contrast, saturation, hue (RGB only, in that
   order);
4. grayscale (RGB only);
5. depth normalization: millimeters / 10000, clamped to [0, 1];
6. Gaussian blur (both modalities).

Geometry uses the half-pixel center convention
``src = (dst + 0.5) * (crop_extent / out_extent) + crop_origin - 0.5`` with
edge-clamped neighbors, accumulated in float64.  Crop windows are stored in
coordinates normalized to [0, 1], so a ``Transform`` is valid for any source
size; crop sampling follows the usual area-fraction / log-uniform-aspect
policy with ten attempts and a full-window fallback.

Outputs are float32: RGB (H, W, 3) in [0, 1], depth (H, W) in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .config import TransformSpec
from .data import PairSample

_DEPTH_SCALE_MM = 10000.0  # millimeters mapped to 1.0


@dataclass(frozen=True)
class Transform:
    """One resolved augmentation draw."""

    crop: tuple[float, float, float, float]  # (top, left, height, width), normalized
    out_size: tuple[int, int]  # (height, width)
    flip: bool
    jitter: tuple[float, float, float, float] | None  # brightness, contrast, saturation, hue
    grayscale: bool
    blur_sigma: float | None

    def __post_init__(self) -> None:
        top, left, h, w = self.crop
        eps = 1e-9
        if h <= 0.0 or w <= 0.0:
            raise ValueError(f"crop window must have positive extent, got {self.crop}")
        if top < -eps or left < -eps or top + h > 1.0 + eps or left + w > 1.0 + eps:
            raise ValueError(f"crop window outside the unit square: {self.crop}")
        if self.out_size[0] < 1 or self.out_size[1] < 1:
            raise ValueError(f"output size must be positive, got {self.out_size}")
        if self.blur_sigma is not None and self.blur_sigma <= 0.0:
            raise ValueError(f"blur sigma must be positive, got {self.blur_sigma}")


def identity_transform(out_size: tuple[int, int]) -> Transform:
    """Full-window crop, no flip, no photometric ops (resize-only)."""
    return Transform(
        crop=(0.0, 0.0, 1.0, 1.0),
        out_size=out_size,
        flip=False,
        jitter=None,
        grayscale=False,
        blur_sigma=None,
    )


def sample_transform(spec: TransformSpec, rng: np.random.Generator) -> Transform:
    """Draw one transform; the RNG call order here is fixed for determinism."""
    crop = (0.0, 0.0, 1.0, 1.0)
    for _ in range(10):
        area = rng.uniform(spec.crop_scale[0], spec.crop_scale[1])
        ratio = math.exp(rng.uniform(math.log(spec.crop_ratio[0]), math.log(spec.crop_ratio[1])))
        w = math.sqrt(area * ratio)
        h = math.sqrt(area / ratio)
        if w <= 1.0 and h <= 1.0:
            top = rng.uniform(0.0, 1.0 - h)
            left = rng.uniform(0.0, 1.0 - w)
            crop = (top, left, h, w)
            break

    flip = bool(rng.random() < spec.flip_prob)

    jitter = None
    if rng.random() < spec.jitter_prob:
        jitter = (
            rng.uniform(max(0.0, 1.0 - spec.brightness), 1.0 + spec.brightness),
            rng.uniform(max(0.0, 1.0 - spec.contrast), 1.0 + spec.contrast),
            rng.uniform(max(0.0, 1.0 - spec.saturation), 1.0 + spec.saturation),
            rng.uniform(-spec.hue, spec.hue),
        )

    grayscale = bool(rng.random() < spec.grayscale_prob)

    blur_sigma = None
    if rng.random() < spec.blur_prob:
        blur_sigma = float(rng.uniform(spec.blur_sigma[0], spec.blur_sigma[1]))

    return Transform(
        crop=crop,
        out_size=spec.out_size,
        flip=flip,
        jitter=jitter,
        grayscale=grayscale,
        blur_sigma=blur_sigma,
    )


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def _source_coords(origin: float, extent: float, out_n: int) -> np.ndarray:
    """Half-pixel-convention source coordinates for ``out_n`` output centers."""
    return (np.arange(out_n, dtype=np.float64) + 0.5) * (extent / out_n) + origin - 0.5


def resample_bilinear(img: np.ndarray, window: tuple[float, float, float, float], out_size: tuple[int, int]) -> np.ndarray:
    """Crop ``window`` (source pixels: top, left, height, width) and resize.

    float64 accumulation, edge-clamped neighbors.  ``img`` is (H, W, C) or
    (H, W) float64.
    """
    top, left, h, w = window
    height, width = img.shape[:2]
    out_h, out_w = out_size
    sy = _source_coords(top, h, out_h)
    sx = _source_coords(left, w, out_w)

    y0 = np.floor(sy)
    x0 = np.floor(sx)
    wy = (sy - y0)[:, None]
    wx = (sx - x0)[None, :]
    yi0 = np.clip(y0.astype(np.int64), 0, height - 1)
    yi1 = np.clip(yi0 + 1, 0, height - 1)
    xi0 = np.clip(x0.astype(np.int64), 0, width - 1)
    xi1 = np.clip(xi0 + 1, 0, width - 1)

    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    tl = img[yi0][:, xi0]
    tr = img[yi0][:, xi1]
    bl = img[yi1][:, xi0]
    br = img[yi1][:, xi1]
    topi = tl * (1.0 - wx) + tr * wx
    boti = bl * (1.0 - wx) + br * wx
    return topi * (1.0 - wy) + boti * wy


def resample_nearest(img: np.ndarray, window: tuple[float, float, float, float], out_size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor crop + resize (same coordinate convention)."""
    top, left, h, w = window
    height, width = img.shape[:2]
    out_h, out_w = out_size
    yi = np.clip(np.floor(_source_coords(top, h, out_h) + 0.5).astype(np.int64), 0, height - 1)
    xi = np.clip(np.floor(_source_coords(left, w, out_w) + 0.5).astype(np.int64), 0, width - 1)
    return img[yi][:, xi]


# ---------------------------------------------------------------------------
# Photometric ops (RGB in [0, 1], float64)
# ---------------------------------------------------------------------------


def _luminance(rgb: np.ndarray) -> np.ndarray:
    return 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]


def _adjust_brightness(rgb: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(rgb * factor, 0.0, 1.0)


def _adjust_contrast(rgb: np.ndarray, factor: float) -> np.ndarray:
    mean = _luminance(rgb).mean()
    return np.clip(mean + (rgb - mean) * factor, 0.0, 1.0)


def _adjust_saturation(rgb: np.ndarray, factor: float) -> np.ndarray:
    lum = _luminance(rgb)[..., None]
    return np.clip(lum + (rgb - lum) * factor, 0.0, 1.0)


def _adjust_hue(rgb: np.ndarray, shift: float) -> np.ndarray:
    """Rotate hue by ``shift`` turns (fraction of the full circle)."""
    hsv = cv2.cvtColor(rgb.astype(np.float32), cv2.COLOR_RGB2HSV)
    hsv[..., 0] = np.mod(hsv[..., 0] + shift * 360.0, 360.0)
    out = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(np.float64)
    return np.clip(out, 0.0, 1.0)


def _to_grayscale(rgb: np.ndarray) -> np.ndarray:
    return np.repeat(_luminance(rgb)[..., None], 3, axis=2)


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return cv2.GaussianBlur(img, ksize=(0, 0), sigmaX=sigma, sigmaY=sigma)


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def apply(transform: Transform, rgb: np.ndarray, depth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply one resolved transform to a synchronized RGB-D frame.

    Accepts uint8 RGB (or float already in [0, 1]) and uint16 depth in
    millimeters (or float millimeters).  Returns float32 ``(rgb, depth)``
    both in [0, 1], at ``transform.out_size``.
    """
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb must be (H, W, 3), got {rgb.shape}")
    if depth.ndim != 2 or depth.shape != rgb.shape[:2]:
        raise ValueError(f"depth must be (H, W) matching rgb, got {depth.shape} vs {rgb.shape[:2]}")

    rgb_f = rgb.astype(np.float64) / 255.0 if rgb.dtype == np.uint8 else rgb.astype(np.float64)
    depth_f = depth.astype(np.float64)

    height, width = rgb_f.shape[:2]
    top, left, h, w = transform.crop
    window = (top * height, left * width, h * height, w * width)

    rgb_out = resample_bilinear(rgb_f, window, transform.out_size)
    depth_out = resample_nearest(depth_f, window, transform.out_size)

    if transform.flip:
        rgb_out = rgb_out[:, ::-1]
        depth_out = depth_out[:, ::-1]

    if transform.jitter is not None:
        b, c, s, hshift = transform.jitter
        rgb_out = _adjust_brightness(rgb_out, b)
        rgb_out = _adjust_contrast(rgb_out, c)
        rgb_out = _adjust_saturation(rgb_out, s)
        if hshift != 0.0:
            rgb_out = _adjust_hue(rgb_out, hshift)

    if transform.grayscale:
        rgb_out = _to_grayscale(rgb_out)

    depth_out = np.clip(depth_out / _DEPTH_SCALE_MM, 0.0, 1.0)

    if transform.blur_sigma is not None:
        rgb_out = _blur(np.ascontiguousarray(rgb_out), transform.blur_sigma)
        depth_out = _blur(np.ascontiguousarray(depth_out), transform.blur_sigma)

    return (
        np.ascontiguousarray(rgb_out, dtype=np.float32),
        np.ascontiguousarray(depth_out, dtype=np.float32),
    )


@dataclass(frozen=True)
class AugmentedPair:
    """Two augmented synchronized views ready for the encoders."""

    rgb1: np.ndarray
    depth1: np.ndarray
    rgb2: np.ndarray
    depth2: np.ndarray
    t1: Transform
    t2: Transform


def make_views(
    pair: PairSample, spec: TransformSpec, rng: np.random.Generator, *, augment: bool = True
) -> AugmentedPair:
    """Draw two independent transforms and apply them to the pair's frames.

    With ``augment=False`` both views get the resize-only identity transform
    (used when temporal displacement alone supplies the view difference).
    """
    if augment:
        t1 = sample_transform(spec, rng)
        t2 = sample_transform(spec, rng)
    else:
        t1 = identity_transform(spec.out_size)
        t2 = identity_transform(spec.out_size)
    rgb1, depth1 = apply(t1, pair.view1.rgb, pair.view1.depth)
    rgb2, depth2 = apply(t2, pair.view2.rgb, pair.view2.depth)
    return AugmentedPair(rgb1=rgb1, depth1=depth1, rgb2=rgb2, depth2=depth2, t1=t1, t2=t2)
