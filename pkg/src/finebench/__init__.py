"""Bounding-box image-editing toolkit: masks, bench bbox derivation, data
refinement filters, background-preservation metrics and decoupled rewards."""

from .geometry import (
    BBox,
    BinaryMask,
    InvalidBoxError,
    Polarity,
    apply_mask,
    bbox_iou,
    box_area_ratio,
    make_mask,
    mask_iou,
    roi_mask,
)
from .metrics import MetricValue, Region, clamp_scale, minmax_normalize, psnr, rgb_entropy, ssim
from .morphology import (
    DiffParams,
    ExtractionMode,
    StructuringElement,
    change_mask,
    derive_bench_bbox,
    dilate,
    erode,
    largest_component_bbox,
    largest_rectangle,
    median_filter,
)
from .refine import FilterVerdict, SampleRecord, Stage, StageConfig, run_pipeline
from .reward import RewardBreakdown, ScorerRubric, group_advantage, total_reward
from .scorer import ScoreKind, ScoreRequest, ScoreResponse, ScorerClient, StubScorer
from .estimators import BBoxDeriver, GroupAdvantage, RefineFilter

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BBoxDeriver",
    "BinaryMask",
    "DiffParams",
    "ExtractionMode",
    "FilterVerdict",
    "GroupAdvantage",
    "InvalidBoxError",
    "MetricValue",
    "Polarity",
    "RefineFilter",
    "Region",
    "RewardBreakdown",
    "SampleRecord",
    "ScoreKind",
    "ScoreRequest",
    "ScoreResponse",
    "ScorerClient",
    "ScorerRubric",
    "Stage",
    "StageConfig",
    "StructuringElement",
    "StubScorer",
    "apply_mask",
    "bbox_iou",
    "box_area_ratio",
    "change_mask",
    "clamp_scale",
    "derive_bench_bbox",
    "dilate",
    "erode",
    "group_advantage",
    "largest_component_bbox",
    "largest_rectangle",
    "make_mask",
    "mask_iou",
    "median_filter",
    "minmax_normalize",
    "psnr",
    "rgb_entropy",
    "roi_mask",
    "run_pipeline",
    "ssim",
    "total_reward",
]
