import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finebench.geometry import (
    BBox,
    BinaryMask,
    InvalidBoxError,
    Polarity,
    apply_mask,
    bbox_iou,
    box_area_ratio,
    crop,
    make_mask,
    mask_bbox,
    mask_iou,
    roi_mask,
    union_bbox,
)

from oracles import pixel_iou, pixel_set


@st.composite
def boxes(draw, size=32):
    x1 = draw(st.integers(0, size - 1))
    y1 = draw(st.integers(0, size - 1))
    x2 = draw(st.integers(x1 + 1, size))
    y2 = draw(st.integers(y1 + 1, size))
    return BBox(x1, y1, x2, y2)


def random_image(rng, h=5, w=6):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


class TestBBox:
    def test_area_and_json(self):
        b = BBox.from_json([1, 1, 3, 4])
        assert b.area == 6
        assert b.to_json() == [1, 1, 3, 4]

    @pytest.mark.parametrize("coords", [(0, 0, 0, 5), (3, 0, 2, 5), (-1, 0, 2, 2), (0, 0, 1.5, 2)])
    def test_degenerate_rejected(self, coords):
        with pytest.raises(InvalidBoxError):
            BBox(*coords)

    def test_wrong_arity(self):
        with pytest.raises(InvalidBoxError):
            BBox.from_json([1, 2, 3])


class TestMakeMask:
    def test_full_canvas_box_gives_all_zeros(self):
        m = make_mask([BBox.full(7, 5)], 7, 5)
        assert m.polarity is Polarity.BACKGROUND_IS_ONE
        assert m.count(1) == 0

    def test_no_boxes_gives_all_ones(self):
        m = make_mask([], 4, 4)
        assert m.bits.all() and m.shape == (4, 4)

    def test_two_squares(self):
        m = make_mask([(0, 0, 2, 2), (2, 2, 4, 4)], 4, 4)
        zeros = {(x, y) for y in range(4) for x in range(4) if not m.bits[y, x]}
        assert zeros == pixel_set((0, 0, 2, 2)) | pixel_set((2, 2, 4, 4))
        assert m.count(0) == 8 and m.count(1) == 8

    def test_out_of_bounds_names_the_box(self):
        with pytest.raises(InvalidBoxError, match=r"\[0, 0, 5, 4\]"):
            make_mask([(0, 0, 5, 4)], 4, 4)

    def test_overlapping_boxes_allowed(self):
        m = make_mask([(0, 0, 3, 3), (1, 1, 4, 4)], 4, 4)
        assert m.count(0) == 9 + 9 - 4

    @settings(max_examples=200, deadline=None)
    @given(st.lists(boxes(size=12), min_size=1, max_size=3))
    def test_zero_count_matches_inclusion_exclusion(self, bs):
        m = make_mask(bs, 12, 12)
        sets = [pixel_set(b.as_list()) for b in bs]
        total = 0
        for k in range(1, len(sets) + 1):
            for combo in itertools.combinations(sets, k):
                total += (-1) ** (k + 1) * len(set.intersection(*combo))
        assert m.count(0) == total


class TestMaskOps:
    def test_complement_involution(self):
        m = make_mask([(1, 1, 3, 2)], 4, 3)
        c = m.complement()
        assert c.polarity is Polarity.ROI_IS_ONE
        assert np.array_equal(c.bits, ~m.bits)
        assert c.complement() == m

    def test_bits_are_read_only_copy(self):
        raw = np.ones((2, 2), dtype=bool)
        m = BinaryMask(raw, Polarity.ROI_IS_ONE)
        raw[0, 0] = False
        assert m.bits.all()
        with pytest.raises(ValueError):
            m.bits[0, 0] = False

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            BinaryMask(np.array([[0, 2]]), Polarity.ROI_IS_ONE)

    def test_roi_mask_is_complement(self):
        assert roi_mask([(0, 0, 1, 1)], 2, 2) == make_mask([(0, 0, 1, 1)], 2, 2).complement()


class TestApplyMask:
    def test_identity_and_black(self):
        img = random_image(np.random.default_rng(0))
        ones = make_mask([], 6, 5)
        assert np.array_equal(apply_mask(img, ones), img)
        assert not apply_mask(img, ones.complement()).any()

    def test_two_pixel_example(self):
        img = np.array([[[10, 20, 30], [40, 50, 60]]], dtype=np.uint8)
        m = BinaryMask(np.array([[1, 0]]), Polarity.BACKGROUND_IS_ONE)
        assert apply_mask(img, m).tolist() == [[[10, 20, 30], [0, 0, 0]]]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            apply_mask(np.zeros((2, 2, 3), np.uint8), make_mask([], 3, 2))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(boxes(size=8), max_size=3), st.integers(0, 2**32 - 1))
    def test_partition(self, bs, seed):
        img = random_image(np.random.default_rng(seed), 8, 8)
        m = make_mask(bs, 8, 8)
        parts = apply_mask(img, m).astype(int) + apply_mask(img, m.complement()).astype(int)
        assert np.array_equal(parts, img)


class TestIoU:
    def test_identical_and_disjoint(self):
        assert bbox_iou((1, 1, 4, 4), (1, 1, 4, 4)) == 1.0
        assert bbox_iou((0, 0, 2, 2), (2, 0, 4, 2)) == 0.0

    def test_half_overlap_is_one_third(self):
        assert bbox_iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3, abs=0)
        assert Fraction(50, 150) == Fraction(1, 3)

    def test_mask_iou_examples(self):
        a = BinaryMask(np.array([[1, 1], [0, 0]]), Polarity.ROI_IS_ONE)
        b = BinaryMask(np.array([[1, 0], [1, 0]]), Polarity.ROI_IS_ONE)
        assert mask_iou(a, b, 1) == pytest.approx(1 / 3)
        assert mask_iou(a, a, 1) == 1.0
        ones = make_mask([], 2, 2)
        assert mask_iou(ones, ones.complement(), 1) == 0.0
        # both sets empty
        assert mask_iou(ones, ones, 0) == 1.0

    def test_mask_iou_bad_on_value(self):
        m = make_mask([], 2, 2)
        with pytest.raises(ValueError):
            mask_iou(m, m, 2)

    @settings(max_examples=300, deadline=None)
    @given(boxes(), boxes())
    def test_bbox_iou_agrees_with_raster(self, a, b):
        iou = bbox_iou(a, b)
        assert iou == bbox_iou(b, a)
        assert 0.0 <= iou <= 1.0
        assert iou == mask_iou(roi_mask([a], 32, 32), roi_mask([b], 32, 32), 1)
        assert iou == pytest.approx(pixel_iou(a.as_list(), b.as_list()), abs=1e-15)


class TestAreaRatio:
    def test_examples(self):
        assert box_area_ratio(BBox.full(10, 8), 10, 8) == 1.0
        assert box_area_ratio((0, 0, 5, 8), 10, 8) == 0.5
        assert box_area_ratio((1, 1, 3, 4), 10, 10) == 0.06

    @settings(max_examples=100, deadline=None)
    @given(boxes(size=16), boxes(size=16))
    def test_monotone_under_containment(self, a, b):
        if a.contains(b):
            assert box_area_ratio(a, 16, 16) >= box_area_ratio(b, 16, 16)


def test_union_and_mask_bbox_and_crop():
    u = union_bbox([(1, 2, 3, 4), (5, 0, 6, 3)])
    assert u == BBox(1, 0, 6, 4)
    m = roi_mask([(1, 2, 3, 4), (5, 0, 6, 3)], 8, 8)
    assert mask_bbox(m) == u
    assert mask_bbox(make_mask([], 3, 3).complement()) is None
    img = np.arange(8 * 8 * 3, dtype=np.uint8).reshape(8, 8, 3)
    assert crop(img, u).shape == (4, 5, 3)
    with pytest.raises(InvalidBoxError):
        union_bbox([])
