"""Decoupled edit reward and group-relative advantages.

The reward of an edited image is split into an edit-region term, judged on
the boxed region only, and a background term that adds a judge score on the
blacked-out-ROI frames to a min-max normalized background PSNR. Candidates
for the same source are standardized within their group.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._validation import check_image, check_real, check_same_hw
from .geometry import BinaryMask, Polarity, apply_mask, crop, make_mask, mask_bbox
from .metrics import PSNR_CAP, clamp_scale, minmax_normalize, psnr
from .scorer import ScoreKind, ScoreRequest, Scorer

NEUTRAL = 0.5
PSNR_FLOOR = 20.0


class RubricTarget(str, enum.Enum):
    ROI = "Roi"
    BACKGROUND = "Background"
    GLOBAL = "Global"


@dataclass(frozen=True)
class ScorerRubric:
    prompt_text: str
    scale_max: float = 5.0
    target: RubricTarget = RubricTarget.GLOBAL

    def __post_init__(self):
        check_real(self.scale_max, "scale_max", low=0.0, low_inclusive=False)
        object.__setattr__(self, "target", RubricTarget(self.target))


DEFAULT_ROI_RUBRIC = ScorerRubric(
    "The two images show the edited region before and after the edit. "
    "Rate from 0 to 5 how accurately the instruction was carried out in this region.",
    5.0,
    RubricTarget.ROI,
)
DEFAULT_BG_RUBRIC = ScorerRubric(
    "The edited region is blacked out in both images. Rate from 0 to 5 how well "
    "everything outside it was left unchanged.",
    5.0,
    RubricTarget.BACKGROUND,
)


def load_rubrics(path) -> tuple[ScorerRubric, ScorerRubric]:
    """Read ``{"c1": ..., "c2": ..., "scale_max": 5}`` (rubric texts may also be
    objects with their own ``prompt_text``/``scale_max``)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    default_max = data.get("scale_max", 5.0)

    def one(entry, target):
        if isinstance(entry, str):
            return ScorerRubric(entry, default_max, target)
        return ScorerRubric(entry["prompt_text"], entry.get("scale_max", default_max), target)

    return one(data["c1"], RubricTarget.ROI), one(data["c2"], RubricTarget.BACKGROUND)


@dataclass(frozen=True)
class RewardBreakdown:
    r_roi: float
    r_bg_vlm: float
    r_bg_psnr: float
    r_bg: float
    r_total: float
    bg_empty: bool = False

    def to_json(self) -> dict:
        return {
            "r_roi": self.r_roi,
            "r_bg_vlm": self.r_bg_vlm,
            "r_bg_psnr": self.r_bg_psnr,
            "r_bg": self.r_bg,
            "r_total": self.r_total,
            "bg_empty": self.bg_empty,
        }


def total_reward(r_roi: float, r_bg_vlm: float, r_bg_psnr: float, bg_empty: bool = False) -> RewardBreakdown:
    for name, v in (("r_roi", r_roi), ("r_bg_vlm", r_bg_vlm), ("r_bg_psnr", r_bg_psnr)):
        check_real(v, name, 0.0, 1.0)
    r_bg = r_bg_vlm + r_bg_psnr
    return RewardBreakdown(float(r_roi), float(r_bg_vlm), float(r_bg_psnr), r_bg, r_roi + r_bg, bg_empty)


def group_advantage(rewards: Sequence[float], epsilon: float = 1e-6) -> list[float]:
    """Standardize rewards within a group: ``(r - mean) / max(std, epsilon)``.

    Population std. A group with no spread gets all-zero advantages.
    """
    check_real(epsilon, "epsilon", low=0.0, low_inclusive=False)
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("group_advantage needs a non-empty 1-D list of rewards")
    centered = r - r.mean()
    std = float(np.sqrt(np.mean(centered**2)))
    return (centered / max(std, epsilon)).tolist()


def _roi_and_background(src, dst, roi: BinaryMask) -> tuple[np.ndarray, np.ndarray, BinaryMask]:
    src = check_image(src, "src")
    dst = check_image(dst, "dst")
    check_same_hw(src.shape, dst.shape, "src", "dst")
    roi = roi.with_polarity(Polarity.ROI_IS_ONE)
    check_same_hw(src.shape, roi.shape, "image", "mask")
    return src, dst, roi


def roi_request(src, dst, roi: BinaryMask, rubric: ScorerRubric) -> ScoreRequest:
    """ROI-only images: background blacked out, then cropped to the ROI's tight box."""
    src, dst, roi = _roi_and_background(src, dst, roi)
    box = mask_bbox(roi)
    if box is None:
        raise ValueError("edit region is empty")
    return ScoreRequest.build(
        ScoreKind.VLM_RUBRIC,
        (crop(apply_mask(src, roi), box), crop(apply_mask(dst, roi), box)),
        rubric.prompt_text,
    )


def bg_request(src, dst, roi: BinaryMask, rubric: ScorerRubric) -> ScoreRequest:
    src, dst, roi = _roi_and_background(src, dst, roi)
    bg = roi.complement()
    return ScoreRequest.build(ScoreKind.VLM_RUBRIC, (apply_mask(src, bg), apply_mask(dst, bg)), rubric.prompt_text)


def roi_reward(src, dst, roi: BinaryMask, rubric: ScorerRubric, scorer: Scorer) -> float:
    resp = scorer.score(roi_request(src, dst, roi, rubric))
    return clamp_scale(resp.raw, rubric.scale_max)


def background_psnr(src, dst, roi: BinaryMask) -> float | None:
    """PSNR outside the ROI, or None when the ROI covers the whole frame."""
    src, dst, roi = _roi_and_background(src, dst, roi)
    bg = roi.complement()
    if bg.count(1) == 0:
        return None
    return psnr(src, dst, bg)


def psnr_fixed_range(value: float, low: float = PSNR_FLOOR, high: float = PSNR_CAP) -> float:
    """Min-max scaling against a fixed dB range, for lone candidates."""
    return min(1.0, max(0.0, (value - low) / (high - low)))


def bg_reward(
    src,
    dst,
    roi: BinaryMask,
    rubric: ScorerRubric,
    scorer: Scorer,
    group_psnrs: Sequence[float] | None = None,
    index: int | None = None,
) -> tuple[float, float]:
    """Background judge score and normalized background PSNR.

    ``group_psnrs`` holds the background PSNRs of all candidates in the group
    and ``index`` the position of this candidate (located by value when
    omitted). Without a group the PSNR uses the fixed [20 dB, cap] range. A
    global edit has no background and scores (0.5, 0.5).
    """
    own = background_psnr(src, dst, roi)
    if own is None:
        return NEUTRAL, NEUTRAL
    resp = scorer.score(bg_request(src, dst, roi, rubric))
    r_vlm = clamp_scale(resp.raw, rubric.scale_max)
    if not group_psnrs:
        return r_vlm, psnr_fixed_range(own)
    if index is None:
        matches = [i for i, v in enumerate(group_psnrs) if v == own]
        if not matches:
            raise ValueError("group_psnrs does not contain this candidate's background PSNR")
        index = matches[0]
    elif group_psnrs[index] != own:
        raise ValueError(f"group_psnrs[{index}]={group_psnrs[index]} but candidate PSNR is {own}")
    return r_vlm, minmax_normalize(group_psnrs)[index]


@dataclass(frozen=True)
class Candidate:
    candidate_id: str
    src: np.ndarray
    dst: np.ndarray
    roi: BinaryMask


@dataclass
class RewardGroup:
    group_id: str
    candidate_ids: list
    rewards: list = field(default_factory=list)
    advantages: list = field(default_factory=list)

    def records(self) -> list[dict]:
        out = []
        for cid, r, a in zip(self.candidate_ids, self.rewards, self.advantages):
            out.append(
                {
                    "group_id": self.group_id,
                    "candidate_id": cid,
                    "r_roi": r.r_roi,
                    "r_bg_vlm": r.r_bg_vlm,
                    "r_bg_psnr": r.r_bg_psnr,
                    "r_bg": r.r_bg,
                    "r_total": r.r_total,
                    "advantage": a,
                }
            )
        return out


def score_group(
    group_id: str,
    candidates: Sequence[Candidate],
    scorer: Scorer,
    roi_rubric: ScorerRubric = DEFAULT_ROI_RUBRIC,
    bg_rubric: ScorerRubric = DEFAULT_BG_RUBRIC,
    group_size: int | None = 16,
    epsilon: float = 1e-6,
    workers: int = 1,
) -> RewardGroup:
    """Score every candidate of one group and attach group-relative advantages."""
    if group_size is not None and len(candidates) != group_size:
        raise ValueError(f"group {group_id!r} has {len(candidates)} candidates, expected {group_size}")
    psnrs = [background_psnr(c.src, c.dst, c.roi) for c in candidates]
    present = [p for p in psnrs if p is not None]
    normalized = iter(minmax_normalize(present)) if present else iter(())
    psnr_terms = [NEUTRAL if p is None else next(normalized) for p in psnrs]

    def one(i: int) -> RewardBreakdown:
        c = candidates[i]
        r_roi = roi_reward(c.src, c.dst, c.roi, roi_rubric, scorer)
        if psnrs[i] is None:
            return total_reward(r_roi, NEUTRAL, NEUTRAL, bg_empty=True)
        r_vlm = clamp_scale(scorer.score(bg_request(c.src, c.dst, c.roi, bg_rubric)).raw, bg_rubric.scale_max)
        return total_reward(r_roi, r_vlm, psnr_terms[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rewards = list(pool.map(one, range(len(candidates))))
    else:
        rewards = [one(i) for i in range(len(candidates))]
    advantages = group_advantage([r.r_total for r in rewards], epsilon)
    return RewardGroup(group_id, [c.candidate_id for c in candidates], rewards, advantages)


def candidate_from_boxes(candidate_id: str, src, dst, boxes) -> Candidate:
    src = check_image(src, "src")
    roi = make_mask(boxes, src.shape[1], src.shape[0]).complement()
    return Candidate(candidate_id, src, check_image(dst, "dst"), roi)

