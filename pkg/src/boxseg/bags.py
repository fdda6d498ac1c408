"""Positive and negative multiple-instance bags from a tight bounding box.

Each row of the box (restricted to the box's columns) and each column of the
box (restricted to its rows) is a positive bag: under the tightness prior it
holds at least one object pixel. Every full row above/below the box and every
full column left/right of it is a negative bag. Rows and columns that cross
the box contribute only their in-box segment; their outside remainder is not
used, so no negative bag can touch the object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import Box

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True, eq=False)
class Bag:
    polarity: str
    axis: str  # "row" or "column"
    index: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)

    @property
    def pixels(self) -> list:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def __len__(self) -> int:
        return int(self.rows.size)


@dataclass(frozen=True, eq=False)
class BagSet:
    positives: tuple
    negatives: tuple
    patch_h: int
    patch_w: int
    source_box: Box

    @property
    def bags(self) -> tuple:
        return self.positives + self.negatives

    def __len__(self) -> int:
        return len(self.positives) + len(self.negatives)

    def index_matrix(self, polarity: str) -> tuple:
        return self._matrices[polarity]

    @cached_property
    def _matrices(self) -> dict:
        # padded [n_bags, max_len] flat row-major indices plus a validity mask
        out = {}
        for pol, bags in ((POSITIVE, self.positives), (NEGATIVE, self.negatives)):
            if not bags:
                out[pol] = (np.zeros((0, 1), dtype=np.intp), np.zeros((0, 1), dtype=bool))
                continue
            length = max(len(b) for b in bags)
            idx = np.zeros((len(bags), length), dtype=np.intp)
            valid = np.zeros((len(bags), length), dtype=bool)
            for i, b in enumerate(bags):
                idx[i, :len(b)] = b.rows * self.patch_w + b.cols
                valid[i, :len(b)] = True
            out[pol] = (idx, valid)
        return out

    @cached_property
    def pixel_mask(self) -> np.ndarray:
        """Union of all bag pixels."""
        m = np.zeros((self.patch_h, self.patch_w), dtype=bool)
        for b in self.bags:
            m[b.rows, b.cols] = True
        return m


def _row_bag(polarity, r, c0, c1):
    cols = np.arange(c0, c1)
    return Bag(polarity, "row", r, np.full(cols.size, r), cols)


def _col_bag(polarity, c, r0, r1):
    rows = np.arange(r0, r1)
    return Bag(polarity, "column", c, rows, np.full(rows.size, c))


def build_bags(box: Box, patch_h: int, patch_w: int) -> BagSet:
    if not box.inside(patch_h, patch_w):
        raise ValueError(f"build_bags: box {box} lies outside the {patch_h}x{patch_w} patch")
    positives = [_row_bag(POSITIVE, r, box.x, box.x + box.w) for r in range(box.y, box.y + box.h)]
    positives += [_col_bag(POSITIVE, c, box.y, box.y + box.h) for c in range(box.x, box.x + box.w)]
    outside_rows = [r for r in range(patch_h) if r < box.y or r > box.y2]
    outside_cols = [c for c in range(patch_w) if c < box.x or c > box.x2]
    negatives = [_row_bag(NEGATIVE, r, 0, patch_w) for r in outside_rows]
    negatives += [_col_bag(NEGATIVE, c, 0, patch_h) for c in outside_cols]
    return BagSet(tuple(positives), tuple(negatives), patch_h, patch_w, box)
