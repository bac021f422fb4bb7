"""Change-mask extraction for benchmark construction.

The pipeline is: per-pixel max-channel difference, thresholding, a binary
median filter, square-element erosion and dilation, then extraction of a box
either as the largest all-ones rectangle or as the bounding box of the
largest 4-connected component.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_image, check_int, check_same_hw
from .geometry import BBox, BinaryMask, Polarity


class ExtractionMode(str, enum.Enum):
    MAX_RECT = "rect"
    LARGEST_CC = "cc"


@dataclass(frozen=True)
class StructuringElement:
    """Square element of side ``2 * radius + 1``; radius 0 is the identity."""

    radius: int = 1
    shape: str = "square"

    def __post_init__(self):
        check_int(self.radius, "radius", minimum=0)
        if self.shape != "square":
            raise ValueError(f"only square structuring elements are supported, got {self.shape!r}")

    @property
    def side(self) -> int:
        return 2 * self.radius + 1


@dataclass(frozen=True)
class DiffParams:
    threshold: int = 10
    median_radius: int = 1
    erode_iters: int = 1
    dilate_iters: int = 2
    se_radius: int = 1

    def __post_init__(self):
        check_int(self.threshold, "threshold", 0, 255)
        check_int(self.median_radius, "median_radius", minimum=0)
        check_int(self.erode_iters, "erode_iters", minimum=0)
        check_int(self.dilate_iters, "dilate_iters", minimum=0)
        check_int(self.se_radius, "se_radius", minimum=0)

    @property
    def element(self) -> StructuringElement:
        return StructuringElement(self.se_radius)


def _window_sums(bits: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel count of ones and of in-bounds pixels in the clipped window."""
    h, w = bits.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    sat[1:, 1:] = bits.astype(np.int64).cumsum(0).cumsum(1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - radius, 0, h)[:, None]
    y1 = np.clip(ys + radius + 1, 0, h)[:, None]
    x0 = np.clip(xs - radius, 0, w)[None, :]
    x1 = np.clip(xs + radius + 1, 0, w)[None, :]
    ones = sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]
    inside = (y1 - y0) * (x1 - x0)
    return ones, inside


def change_mask(src, dst, threshold: int = 10) -> BinaryMask:
    """1 where the largest per-channel absolute difference exceeds ``threshold``."""
    src = check_image(src, "src")
    dst = check_image(dst, "dst")
    check_same_hw(src.shape, dst.shape, "src", "dst")
    threshold = check_int(threshold, "threshold", 0, 255)
    diff = np.abs(src.astype(np.int16) - dst.astype(np.int16)).max(axis=2)
    return BinaryMask(diff > threshold, Polarity.ROI_IS_ONE)


def median_filter(m: BinaryMask, radius: int = 1) -> BinaryMask:
    """Binary majority filter; windows are clipped at the border and ties go to 1."""
    radius = check_int(radius, "radius", minimum=0)
    if radius == 0:
        return m
    ones, inside = _window_sums(m.bits, radius)
    return BinaryMask(2 * ones >= inside, m.polarity)


def erode(m: BinaryMask, se: StructuringElement | int = 1) -> BinaryMask:
    """1 iff the whole element footprint is in-bounds and all ones."""
    se = se if isinstance(se, StructuringElement) else StructuringElement(se)
    if se.radius == 0:
        return m
    ones, _ = _window_sums(m.bits, se.radius)
    return BinaryMask(ones == se.side * se.side, m.polarity)


def dilate(m: BinaryMask, se: StructuringElement | int = 1) -> BinaryMask:
    """1 iff any in-bounds pixel under the element is 1."""
    se = se if isinstance(se, StructuringElement) else StructuringElement(se)
    if se.radius == 0:
        return m
    ones, _ = _window_sums(m.bits, se.radius)
    return BinaryMask(ones > 0, m.polarity)


def _strict_smaller_bounds(heights: list[int]) -> tuple[list[int], list[int]]:
    """For each column, the nearest column left and right with a strictly smaller height."""
    n = len(heights)
    left = [-1] * n
    right = [n] * n
    stack: list[int] = []
    for i, h in enumerate(heights):
        while stack and heights[stack[-1]] >= h:
            stack.pop()
        left[i] = stack[-1] if stack else -1
        stack.append(i)
    stack.clear()
    for i in range(n - 1, -1, -1):
        h = heights[i]
        while stack and heights[stack[-1]] >= h:
            stack.pop()
        right[i] = stack[-1] if stack else n
        stack.append(i)
    return left, right


def largest_rectangle(m: BinaryMask) -> BBox | None:
    """Largest all-ones axis-aligned rectangle, via row histograms and monotonic stacks.

    Every maximum-area rectangle is maximal in all four directions, so it is
    the full span of some column at its bottom row. Enumerating those spans
    and keeping the smallest ``(-area, y1, x1, y2, x2)`` gives the
    deterministic tie-break.
    """
    m.require(Polarity.ROI_IS_ONE, "largest_rectangle")
    bits = m.bits
    h, w = bits.shape
    heights = [0] * w
    best = None
    for y in range(h):
        row = bits[y]
        for x in range(w):
            heights[x] = heights[x] + 1 if row[x] else 0
        left, right = _strict_smaller_bounds(heights)
        for x in range(w):
            hx = heights[x]
            if hx == 0:
                continue
            key = (-(hx * (right[x] - left[x] - 1)), y + 1 - hx, left[x] + 1, y + 1, right[x])
            if best is None or key < best:
                best = key
    if best is None:
        return None
    _, y1, x1, y2, x2 = best
    return BBox(x1, y1, x2, y2)


def largest_component_bbox(m: BinaryMask) -> BBox | None:
    """Tight box of the largest 4-connected component of ones."""
    m.require(Polarity.ROI_IS_ONE, "largest_component_bbox")
    labels, n = ndimage.label(m.bits)
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    objects = ndimage.find_objects(labels)
    best = None
    for idx in np.flatnonzero(sizes == sizes.max()):
        rs, cs = objects[idx]
        key = (rs.start, cs.start, rs.stop, cs.stop)
        if best is None or key < best:
            best = key
    y1, x1, y2, x2 = best
    return BBox(x1, y1, x2, y2)


def cleaned_change_mask(src, dst, params: DiffParams | None = None) -> BinaryMask:
    """Difference mask after median filtering, erosion and dilation."""
    params = params or DiffParams()
    m = change_mask(src, dst, params.threshold)
    m = median_filter(m, params.median_radius)
    se = params.element
    for _ in range(params.erode_iters):
        m = erode(m, se)
    for _ in range(params.dilate_iters):
        m = dilate(m, se)
    return m


def extract_bbox(m: BinaryMask, mode: ExtractionMode | str = ExtractionMode.MAX_RECT) -> BBox | None:
    mode = ExtractionMode(mode)
    if mode is ExtractionMode.MAX_RECT:
        return largest_rectangle(m)
    return largest_component_bbox(m)


def derive_bench_bbox(
    src,
    dst,
    params: DiffParams | None = None,
    mode: ExtractionMode | str = ExtractionMode.MAX_RECT,
) -> BBox | None:
    """Box of the edited region of a before/after pair, or None if nothing changed."""
    return extract_bbox(cleaned_change_mask(src, dst, params), mode)
