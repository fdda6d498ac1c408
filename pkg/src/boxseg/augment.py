"""Patch extraction for training and proxy inference.

Images are ``[C, H, W]`` float arrays in [0, 1]; masks are ``[H, W]`` bool.
All resizing uses half-pixel-centre sampling (bilinear for images, nearest
for masks), shared with the differentiable upsampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffcore import resize_bilinear_array
from .geometry import Box, bbox_of_mask, clip_box

TRAIN_SIZE = 288
SALIENT_RESIZE = 320
PROXY_SIZE = 320
MAX_RETRIES = 10


class Rng:
    """Seeded generator with the two draws augmentation needs."""

    def __init__(self, seed):
        self._gen = np.random.default_rng(seed)

    def uniform(self, a: float, b: float) -> float:
        return float(self._gen.uniform(a, b))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high]`` inclusive."""
        return int(self._gen.integers(low, high + 1))


@dataclass
class ImagePatch:
    pixels: np.ndarray
    mask: Optional[np.ndarray] = None
    box: Optional[Box] = None

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return resize_bilinear_array(np.asarray(image, dtype=np.float64), out_h, out_w)


def resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return np.asarray(mask, dtype=bool)[np.ix_(rows, cols)]


def scaled_size(patch: int) -> int:
    """Resize/proxy size keeping the 288 : 320 ratio for a given training patch size."""
    return int(round(patch * SALIENT_RESIZE / TRAIN_SIZE))


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def jitter_box(box: Box, rng) -> tuple:
    """Continuous ``(x, y, w, h)`` after a random shift of up to a quarter of the
    box size and a rescale by 0.5x to 1.5x per axis."""
    x2 = box.x + rng.uniform(-0.25, 0.25) * box.w
    y2 = box.y + rng.uniform(-0.25, 0.25) * box.h
    w2 = rng.uniform(0.5, 1.5) * box.w
    h2 = rng.uniform(0.5, 1.5) * box.h
    return x2, y2, w2, h2


def box_augmentation(box: Box, rng, height: Optional[int] = None, width: Optional[int] = None) -> Box:
    """:func:`jitter_box` rounded half-up to pixel edges, clipped to the image if bounds are given."""
    x2, y2, w2, h2 = jitter_box(box, rng)
    left, top = _round_half_up(x2), _round_half_up(y2)
    right, bottom = _round_half_up(x2 + w2), _round_half_up(y2 + h2)
    if width is not None:
        left, right = min(max(left, 0), width - 1), min(right, width)
    if height is not None:
        top, bottom = min(max(top, 0), height - 1), min(bottom, height)
    return Box(left, top, max(1, right - left), max(1, bottom - top))


def _map_box(gt: Box, window: Box, size: int) -> Optional[Box]:
    sx, sy = size / window.w, size / window.h
    return clip_box((gt.x - window.x) * sx, (gt.y - window.y) * sy,
                    (gt.x + gt.w - window.x) * sx, (gt.y + gt.h - window.y) * sy, size, size)


def weak_augment(image: np.ndarray, box: Box, rng, size: int = TRAIN_SIZE) -> ImagePatch:
    """Crop a jittered window around ``box`` and resize it; the GT box is mapped along."""
    _, height, width = image.shape
    if not box.inside(height, width):
        raise ValueError(f"weak_augment: box {box} outside {height}x{width} image")
    for _ in range(MAX_RETRIES):
        window = box_augmentation(box, rng, height, width)
        mapped = _map_box(box, window, size)
        if mapped is not None:
            break
    else:
        window = box
        mapped = Box(0, 0, size, size)
    ys, xs = window.slices()
    pixels = resize_image(image[:, ys, xs], size, size)
    return ImagePatch(pixels, None, mapped)


def salient_augment(image: np.ndarray, mask: np.ndarray, rng, size: int = TRAIN_SIZE,
                    resize: int = SALIENT_RESIZE) -> ImagePatch:
    """Resize to ``resize`` square, then take a random ``size`` crop of image and mask."""
    big = resize_image(image, resize, resize)
    big_mask = resize_mask(mask, resize, resize)
    span = resize - size
    for _ in range(MAX_RETRIES):
        oy, ox = rng.integers(0, span), rng.integers(0, span)
        crop = big_mask[oy:oy + size, ox:ox + size]
        if crop.any():
            break
    else:
        oy = ox = span // 2
        crop = big_mask[oy:oy + size, ox:ox + size]
        if not crop.any():
            raise ValueError("salient_augment: object vanishes from every crop")
    return ImagePatch(big[:, oy:oy + size, ox:ox + size], crop.copy(), bbox_of_mask(crop))


def crop_scale(box: Box, size: int = PROXY_SIZE) -> tuple:
    """(x, y) scale factors of the box-to-square resize."""
    return size / box.w, size / box.h


def proxy_crop(image: np.ndarray, box: Box, size: int = PROXY_SIZE) -> ImagePatch:
    _, height, width = image.shape
    if not box.inside(height, width):
        raise ValueError(f"proxy_crop: box {box} outside {height}x{width} image")
    ys, xs = box.slices()
    return ImagePatch(resize_image(image[:, ys, xs], size, size), None, Box(0, 0, size, size))


def paste_scores(scores: np.ndarray, box: Box, height: int, width: int,
                 threshold: float = 0.5) -> np.ndarray:
    """Resize a square score map back onto ``box`` and threshold it into an image mask."""
    local = resize_bilinear_array(np.asarray(scores, dtype=np.float64), box.h, box.w)
    out = np.zeros((height, width), dtype=bool)
    out[box.slices()] = local > threshold
    return out
