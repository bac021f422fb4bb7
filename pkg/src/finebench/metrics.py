"""Rule-based image metrics, optionally restricted to a mask region."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._validation import check_image, check_real, check_same_hw
from .geometry import BinaryMask

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_C1 = (SSIM_K1 * 255) ** 2
SSIM_C2 = (SSIM_K2 * 255) ** 2

METRIC_NAMES = ("psnr_bg", "ssim_bg", "lpips_bg", "clip_roi", "rgbe", "obr", "pc", "vn", "pdi")


class Region(str, enum.Enum):
    FULL_IMAGE = "FullImage"
    OUTSIDE_BOX = "OutsideBox"
    INSIDE_BOX = "InsideBox"


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float | None
    region: Region
    mask_pixels: int
    error: str | None = None

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "value": self.value,
            "region": Region(self.region).value,
            "mask_pixels": self.mask_pixels,
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_json(cls, d: dict) -> "MetricValue":
        value = d.get("value")
        return cls(
            name=d["name"],
            value=None if value is None else float(value),
            region=Region(d["region"]),
            mask_pixels=int(d["mask_pixels"]),
            error=d.get("error"),
        )


def _region(a, b, m: BinaryMask | None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_hw(a.shape, b.shape, "a", "b")
    if m is None:
        return a, b, None
    check_same_hw(a.shape, m.shape, "image", "mask")
    if not m.bits.any():
        raise ValueError("metric region is empty")
    return a, b, m.bits


def psnr(a, b, m: BinaryMask | None = None) -> float:
    """PSNR in dB over the pixels where ``m`` is 1 (all pixels if ``m`` is None).

    Identical regions return ``PSNR_CAP`` instead of infinity.
    """
    a, b, bits = _region(a, b, m)
    if bits is not None:
        a, b = a[bits], b[bits]
    diff = a.astype(np.int64) - b.astype(np.int64)
    sq = int(np.square(diff).sum())
    if sq == 0:
        return PSNR_CAP
    mse = sq / diff.size
    return min(PSNR_CAP, 20.0 * math.log10(255.0 / math.sqrt(mse)))


def _ssim_index(mu_a, mu_b, var_a, var_b, cov):
    return ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )


def _box_sum(x: np.ndarray, k: int) -> np.ndarray:
    """Sums over every k x k window (valid positions only) of an integer array."""
    sat = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = x.cumsum(0).cumsum(1)
    return sat[k:, k:] - sat[:-k, k:] - sat[k:, :-k] + sat[:-k, :-k]


def ssim(a, b, m: BinaryMask | None = None) -> float:
    """Mean SSIM of the luma (R+G+B)/3 over 8x8 windows lying entirely in the region.

    Window statistics use population moments. When no window fits inside the
    region, a single window spanning all region pixels is used instead.
    """
    a, b, bits = _region(a, b, m)
    # channel sums stay integral so window moments are exact
    sa = a.astype(np.int64).sum(axis=2)
    sb = b.astype(np.int64).sum(axis=2)
    h, w = sa.shape
    if bits is not None:
        sa = np.where(bits, sa, 0)
        sb = np.where(bits, sb, 0)
    k = SSIM_WINDOW
    valid = None
    if h >= k and w >= k:
        region = np.ones((h, w), dtype=np.int64) if bits is None else bits.astype(np.int64)
        valid = _box_sum(region, k) == k * k
    if valid is None or not valid.any():
        sel = np.ones((h, w), dtype=bool) if bits is None else bits
        xa = sa[sel] / 3.0
        xb = sb[sel] / 3.0
        mu_a, mu_b = xa.mean(), xb.mean()
        return float(
            _ssim_index(
                mu_a,
                mu_b,
                ((xa - mu_a) ** 2).mean(),
                ((xb - mu_b) ** 2).mean(),
                ((xa - mu_a) * (xb - mu_b)).mean(),
            )
        )
    n = float(k * k)
    s_a = _box_sum(sa, k)[valid]
    s_b = _box_sum(sb, k)[valid]
    s_aa = _box_sum(sa * sa, k)[valid]
    s_bb = _box_sum(sb * sb, k)[valid]
    s_ab = _box_sum(sa * sb, k)[valid]
    # exact integer numerators: n * sum(x^2) - sum(x)^2, luma scale folded in as 1/9
    var_a = (n * s_aa - s_a * s_a) / (n * n * 9.0)
    var_b = (n * s_bb - s_b * s_b) / (n * n * 9.0)
    cov = (n * s_ab - s_a * s_b) / (n * n * 9.0)
    mu_a = s_a / (3.0 * n)
    mu_b = s_b / (3.0 * n)
    return float(np.mean(_ssim_index(mu_a, mu_b, var_a, var_b, cov)))


def rgb_entropy(img) -> float:
    """Mean over channels of the 256-bin Shannon entropy, in bits."""
    img = check_image(img)
    total = 0.0
    for c in range(3):
        counts = np.bincount(img[:, :, c].ravel(), minlength=256)
        p = counts[counts > 0] / img.shape[0] / img.shape[1]
        total += float(-(p * np.log2(p)).sum())
    return min(8.0, max(0.0, total / 3.0))


def minmax_normalize(values: Sequence[float]) -> list[float]:
    """Scale to [0, 1]; a degenerate range maps every value to 0.5."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("minmax_normalize needs at least one value")
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return [0.5] * len(vals)
    span = hi - lo
    return [min(1.0, max(0.0, (v - lo) / span)) for v in vals]


def clamp_scale(raw: float, scale_max: float) -> float:
    scale_max = check_real(scale_max, "scale_max", low=0.0, low_inclusive=False)
    return min(1.0, max(0.0, float(raw) / scale_max))
