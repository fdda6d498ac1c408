import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boxseg.geometry import Box, as_mask, bbox_of_mask, box_iou, box_mask, clip_box, mask_iou

boxes = st.builds(Box, st.integers(0, 30), st.integers(0, 30), st.integers(1, 20), st.integers(1, 20))


class TestBox:
    def test_extents(self):
        b = Box(3, 2, 5, 4)
        assert (b.x2, b.y2, b.area) == (7, 5, 20)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Box(0, 0, 0, 3)

    def test_rejects_fractional(self):
        with pytest.raises(ValueError):
            Box(0.5, 0, 2, 2)

    def test_list_round_trip(self):
        assert Box.from_list(Box(1, 2, 3, 4).to_list()) == Box(1, 2, 3, 4)

    def test_inside(self):
        assert Box(0, 0, 4, 4).inside(4, 4)
        assert not Box(1, 0, 4, 4).inside(4, 4)


class TestBoxIou:
    def test_identical(self):
        assert box_iou(Box(1, 1, 5, 5), Box(1, 1, 5, 5)) == 1.0

    def test_half_shift(self):
        assert box_iou(Box(0, 0, 10, 10), Box(5, 0, 10, 10)) == pytest.approx(50 / 150)

    def test_disjoint(self):
        assert box_iou(Box(0, 0, 3, 3), Box(3, 0, 3, 3)) == 0.0

    @given(boxes, boxes)
    def test_matches_mask_iou(self, a, b):
        ma, mb = box_mask(a, 52, 52), box_mask(b, 52, 52)
        assert box_iou(a, b) == pytest.approx(mask_iou(ma, mb))

    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        v = box_iou(a, b)
        assert v == box_iou(b, a)
        assert 0.0 <= v <= 1.0


class TestMaskIou:
    def test_equal(self):
        m = np.eye(4, dtype=bool)
        assert mask_iou(m, m) == 1.0

    def test_set_arithmetic(self):
        a = np.zeros((3, 3), bool)
        b = np.zeros((3, 3), bool)
        a[0, :3] = True
        a[1, 0] = True
        b[0, 1:3] = True
        b[1, 0] = True
        b[2, :2] = True
        assert (a.sum(), b.sum(), (a & b).sum()) == (4, 5, 3)
        assert mask_iou(a, b) == pytest.approx(0.5)

    def test_both_empty(self):
        z = np.zeros((2, 2), bool)
        assert mask_iou(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            mask_iou(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_as_mask_rejects_3d(self):
        with pytest.raises(ValueError):
            as_mask(np.zeros((1, 2, 2)))


class TestBboxOfMask:
    def test_single_pixel(self):
        m = np.zeros((6, 6), bool)
        m[2, 3] = True
        assert bbox_of_mask(m) == Box(3, 2, 1, 1)

    def test_two_pixels(self):
        m = np.zeros((8, 10), bool)
        m[2, 3] = m[5, 7] = True
        assert bbox_of_mask(m) == Box(3, 2, 5, 4)

    def test_empty(self):
        assert bbox_of_mask(np.zeros((3, 3), bool)) is None

    @given(boxes)
    def test_inverts_box_mask(self, b):
        assert bbox_of_mask(box_mask(b, 52, 52)) == b


class TestClipBox:
    def test_inside(self):
        assert clip_box(2, 3, 7, 9, 20, 20) == Box(2, 3, 5, 6)

    def test_clipped(self):
        assert clip_box(-4, -1, 30, 5, 10, 12) == Box(0, 0, 12, 5)

    def test_vanishes(self):
        assert clip_box(12, 0, 15, 5, 10, 10) is None

    def test_rounds_half_up(self):
        assert clip_box(1.5, 0.49, 4.5, 3.0, 10, 10) == Box(2, 0, 3, 3)
