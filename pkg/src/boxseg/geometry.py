"""Integer-pixel boxes and binary masks.

Masks are plain 2-D boolean numpy arrays (row-major, ``mask[row, col]``).
Boxes use inclusive pixel extents: a box covers columns ``x .. x+w-1`` and rows
``y .. y+h-1``. All IoUs are ratios of pixel counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class Box:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if int(v) != v:
                raise ValueError(f"Box.{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.w < 1 or self.h < 1:
            raise ValueError(f"Box needs w >= 1 and h >= 1, got w={self.w} h={self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x2(self) -> int:
        """Last covered column (inclusive)."""
        return self.x + self.w - 1

    @property
    def y2(self) -> int:
        """Last covered row (inclusive)."""
        return self.y + self.h - 1

    def inside(self, height: int, width: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 < width and self.y2 < height

    def slices(self) -> tuple:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def to_list(self) -> list:
        return [self.x, self.y, self.w, self.h]

    @classmethod
    def from_list(cls, values) -> "Box":
        x, y, w, h = values
        return cls(x, y, w, h)


def box_iou(a: Box, b: Box) -> float:
    ix = min(a.x2, b.x2) - max(a.x, b.x) + 1
    iy = min(a.y2, b.y2) - max(a.y, b.y) + 1
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def as_mask(m) -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def mask_iou(a, b) -> float:
    """Pixel IoU; two empty masks agree perfectly (1.0)."""
    a, b = as_mask(a), as_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask_iou: dimension mismatch {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def bbox_of_mask(m) -> Optional[Box]:
    m = as_mask(m)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    return Box(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def box_mask(box: Box, height: int, width: int) -> np.ndarray:
    m = np.zeros((height, width), dtype=bool)
    m[box.slices()] = True
    return m


def clip_box(x0: float, y0: float, x1: float, y1: float, height: int, width: int) -> Optional[Box]:
    """Box from half-open pixel edges ``[x0, x1) x [y0, y1)`` clipped to an image.

    Edges are rounded half-up. Returns ``None`` if nothing of the box survives.
    """
    left = max(0, int(np.floor(x0 + 0.5)))
    top = max(0, int(np.floor(y0 + 0.5)))
    right = min(width, int(np.floor(x1 + 0.5)))
    bottom = min(height, int(np.floor(y1 + 0.5)))
    if right - left < 1 or bottom - top < 1:
        return None
    return Box(left, top, right - left, bottom - top)
