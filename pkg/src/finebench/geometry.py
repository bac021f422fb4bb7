"""Bounding boxes, binary masks and the mask algebra built on them.

Boxes are half-open pixel rectangles ``[x1, x2) x [y1, y2)`` with the origin at
the top-left corner. Images are ``uint8`` arrays of shape (H, W, 3); masks
carry an explicit polarity so callers never have to guess whether ``1`` marks
the edit region or the background.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._validation import check_bits, check_image, check_same_hw


class InvalidBoxError(ValueError):
    """A box is degenerate or does not fit the image it is bound to."""


class Polarity(str, enum.Enum):
    BACKGROUND_IS_ONE = "BackgroundIsOne"
    ROI_IS_ONE = "RoiIsOne"

    def flipped(self) -> "Polarity":
        if self is Polarity.BACKGROUND_IS_ONE:
            return Polarity.ROI_IS_ONE
        return Polarity.BACKGROUND_IS_ONE


@dataclass(frozen=True, order=True)
class BBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for field in ("x1", "y1", "x2", "y2"):
            value = getattr(self, field)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise InvalidBoxError(f"{field} must be an integer, got {value!r} in {self!r}")
            object.__setattr__(self, field, int(value))
        if self.x1 < 0 or self.y1 < 0 or self.x2 <= self.x1 or self.y2 <= self.y1:
            raise InvalidBoxError(f"degenerate or negative box {self.as_list()}")

    @classmethod
    def from_json(cls, value: Sequence[int]) -> "BBox":
        if isinstance(value, BBox):
            return value
        if len(value) != 4:
            raise InvalidBoxError(f"box must have 4 coordinates, got {list(value)}")
        return cls(*value)

    @classmethod
    def full(cls, width: int, height: int) -> "BBox":
        """The box covering the whole canvas (a global edit)."""
        return cls(0, 0, width, height)

    def as_list(self) -> list[int]:
        return [self.x1, self.y1, self.x2, self.y2]

    to_json = as_list

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    def fits(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def check_bounds(self, width: int, height: int) -> "BBox":
        if not self.fits(width, height):
            raise InvalidBoxError(f"box {self.as_list()} out of bounds for {width}x{height} image")
        return self

    def contains(self, other: "BBox") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )

    def intersection_area(self, other: "BBox") -> int:
        w = min(self.x2, other.x2) - max(self.x1, other.x1)
        h = min(self.y2, other.y2) - max(self.y1, other.y1)
        if w <= 0 or h <= 0:
            return 0
        return w * h

    def slices(self) -> tuple[slice, slice]:
        """Row/column slices selecting this box from an (H, W, ...) array."""
        return slice(self.y1, self.y2), slice(self.x1, self.x2)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A boolean raster with an explicit polarity tag."""

    bits: np.ndarray
    polarity: Polarity

    def __post_init__(self):
        bits = check_bits(self.bits)
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "polarity", Polarity(self.polarity))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def complement(self) -> "BinaryMask":
        return BinaryMask(~self.bits, self.polarity.flipped())

    def count(self, value: int = 1) -> int:
        ones = int(np.count_nonzero(self.bits))
        return ones if value else self.bits.size - ones

    def with_polarity(self, polarity: Polarity) -> "BinaryMask":
        """Return the same region set expressed in ``polarity``."""
        polarity = Polarity(polarity)
        return self if polarity is self.polarity else self.complement()

    def require(self, polarity: Polarity, op: str) -> None:
        if self.polarity is not Polarity(polarity):
            raise ValueError(f"{op} requires a {Polarity(polarity).value} mask, got {self.polarity.value}")

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.polarity is other.polarity and np.array_equal(self.bits, other.bits)

    __hash__ = None

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, {self.polarity.value}, ones={self.count(1)})"


def _as_boxes(boxes: Iterable) -> list[BBox]:
    return [BBox.from_json(b) for b in boxes]


def make_mask(boxes: Iterable, width: int, height: int) -> BinaryMask:
    """Background mask for a set of boxes: 0 inside any box, 1 elsewhere.

    An empty box list yields an all-ones mask; a full-canvas box yields all
    zeros. Overlapping boxes are allowed.
    """
    bits = np.ones((height, width), dtype=bool)
    for box in _as_boxes(boxes):
        box.check_bounds(width, height)
        bits[box.slices()] = False
    return BinaryMask(bits, Polarity.BACKGROUND_IS_ONE)


def roi_mask(boxes: Iterable, width: int, height: int) -> BinaryMask:
    """Edit-region mask: 1 inside the union of ``boxes``."""
    return make_mask(boxes, width, height).complement()


def apply_mask(img, m: BinaryMask) -> np.ndarray:
    """Keep pixels where the mask bit is 1 and black out the rest."""
    img = check_image(img)
    check_same_hw(img.shape, m.shape, "image", "mask")
    return img * m.bits[:, :, None].astype(np.uint8)


def bbox_iou(a: BBox, b: BBox) -> float:
    a, b = BBox.from_json(a), BBox.from_json(b)
    inter = a.intersection_area(b)
    return inter / (a.area + b.area - inter)


def mask_iou(a: BinaryMask, b: BinaryMask, on_value: int = 1) -> float:
    """IoU of the pixel sets equal to ``on_value``; two empty sets give 1.0."""
    if on_value not in (0, 1):
        raise ValueError(f"on_value must be 0 or 1, got {on_value!r}")
    check_same_hw(a.shape, b.shape, "a", "b")
    sa = a.bits if on_value else ~a.bits
    sb = b.bits if on_value else ~b.bits
    union = int(np.count_nonzero(sa | sb))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(sa & sb)) / union


def box_area_ratio(b: BBox, width: int, height: int) -> float:
    b = BBox.from_json(b).check_bounds(width, height)
    return b.area / (width * height)


def union_bbox(boxes: Iterable) -> BBox:
    """Tightest box enclosing every box in ``boxes``."""
    boxes = _as_boxes(boxes)
    if not boxes:
        raise InvalidBoxError("union of an empty box list is undefined")
    return BBox(
        min(b.x1 for b in boxes),
        min(b.y1 for b in boxes),
        max(b.x2 for b in boxes),
        max(b.y2 for b in boxes),
    )


def mask_bbox(m: BinaryMask, value: int = 1) -> BBox | None:
    """Tight box around the pixels equal to ``value``, or None if there are none."""
    bits = m.bits if value else ~m.bits
    rows = np.flatnonzero(bits.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(bits.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def crop(img, box: BBox) -> np.ndarray:
    img = check_image(img)
    box = BBox.from_json(box).check_bounds(img.shape[1], img.shape[0])
    return np.ascontiguousarray(img[box.slices()])
