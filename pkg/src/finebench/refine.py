"""Sequential data-refinement filters producing one verdict per sample.

Stages run in the configured order and the first failing stage rejects the
sample. Image-loading problems and judge transport failures produce *error*
verdicts, which are counted separately from rejections.
"""

from __future__ import annotations

import enum
import json
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from PIL import Image

from ._validation import check_image, check_real
from .geometry import BBox, InvalidBoxError, box_area_ratio, crop, mask_iou, roi_mask, union_bbox
from .metrics import clamp_scale, rgb_entropy
from .morphology import DiffParams, cleaned_change_mask
from .scorer import ScoreKind, ScoreRequest, Scorer, ScorerError

CATEGORIES = (
    "Objects",
    "Urban Scenes",
    "Indoors",
    "Landscapes",
    "Food",
    "Plants",
    "Animals",
    "People",
    "Text",
    "Artwork",
)

DEFAULT_GLOBAL_RUBRIC = (
    "Rate from 0 to 5 how well the edited image (second) follows the instruction "
    "applied to the original (first) while remaining visually coherent as a whole."
)
DEFAULT_LOCAL_RUBRIC = (
    "Both images are crops of the edited region. Rate from 0 to 5 how accurately and "
    "cleanly the instruction was carried out inside this region."
)


class Stage(str, enum.Enum):
    CONFIDENCE = "ConfidenceGate"
    BOX_RATIO = "BoxRatioGate"
    IOU = "IoUGate"
    RGBE = "RgbeGate"
    VLM_GLOBAL = "VlmGlobal"
    VLM_LOCAL = "VlmLocal"
    EDIT_SCORE = "EditScoreGate"

    @classmethod
    def parse(cls, name: str) -> "Stage":
        key = name.strip().lower().replace("_", "").replace("-", "")
        for stage in cls:
            if key in (stage.value.lower(), stage.value.lower().removesuffix("gate")):
                return stage
        raise ValueError(f"unknown stage {name!r}; choose from {', '.join(s.value for s in cls)}")

    @property
    def needs_scorer(self) -> bool:
        return self in (Stage.VLM_GLOBAL, Stage.VLM_LOCAL, Stage.EDIT_SCORE)


DEFAULT_ORDER = tuple(Stage)


class SampleError(Exception):
    """The sample cannot be evaluated (missing file, size mismatch, bad box)."""


@dataclass(frozen=True)
class SampleRecord:
    id: str
    src_path: str
    dst_path: str
    instruction: str
    boxes: tuple
    category: str
    detector_confidence: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        boxes = tuple(BBox.from_json(b) for b in self.boxes)
        if not boxes:
            raise ValueError(f"sample {self.id!r} has no boxes")
        object.__setattr__(self, "boxes", boxes)
        if self.category not in CATEGORIES:
            raise ValueError(f"sample {self.id!r}: unknown category {self.category!r}")
        if self.detector_confidence is not None:
            check_real(self.detector_confidence, "detector_confidence", 0.0, 1.0)

    @classmethod
    def from_json(cls, d: dict, base_dir: str | os.PathLike | None = None) -> "SampleRecord":
        def resolve(p):
            if base_dir is None or os.path.isabs(p):
                return str(p)
            return str(Path(base_dir) / p)

        return cls(
            id=str(d["id"]),
            src_path=resolve(d["src_path"]),
            dst_path=resolve(d["dst_path"]),
            instruction=str(d.get("instruction", "")),
            boxes=tuple(d["boxes"]),
            category=d["category"],
            detector_confidence=d.get("detector_confidence"),
            extras={str(k): str(v) for k, v in (d.get("extras") or {}).items()},
        )

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "src_path": self.src_path,
            "dst_path": self.dst_path,
            "instruction": self.instruction,
            "boxes": [b.as_list() for b in self.boxes],
            "category": self.category,
        }
        if self.detector_confidence is not None:
            out["detector_confidence"] = self.detector_confidence
        if self.extras:
            out["extras"] = dict(self.extras)
        return out


def read_manifest(path: str | os.PathLike) -> list[SampleRecord]:
    """Load a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(SampleRecord.from_json(json.loads(line), path.parent))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return out


def load_image(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return check_image(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as exc:
        raise SampleError(f"cannot load {path}: {exc}") from exc


@dataclass(frozen=True)
class FilterVerdict:
    id: str
    passed: bool
    rejected_at: Stage | None = None
    measurements: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def status(self) -> str:
        if self.passed:
            return "pass"
        return "error" if self.error is not None else "reject"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "passed": self.passed,
            "rejected_at": None if self.rejected_at is None else Stage(self.rejected_at).value,
            "measurements": {Stage(k).value: v for k, v in self.measurements.items()},
            "error": self.error,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FilterVerdict":
        return cls(
            id=d["id"],
            passed=bool(d["passed"]),
            rejected_at=None if d.get("rejected_at") is None else Stage(d["rejected_at"]),
            measurements={Stage(k): v for k, v in (d.get("measurements") or {}).items()},
            error=d.get("error"),
        )


@dataclass(frozen=True)
class StageConfig:
    order: tuple = DEFAULT_ORDER
    conf_thresh: float = 0.7
    max_box_ratio: float = 0.9
    iou_thresh: float = 0.5
    rgbe_min: float = 3.0
    vlm_min: float = 0.7
    editscore_min: float = 0.7
    diff_params: DiffParams = field(default_factory=DiffParams)
    rubric_global: str = DEFAULT_GLOBAL_RUBRIC
    rubric_local: str = DEFAULT_LOCAL_RUBRIC

    def __post_init__(self):
        order = tuple(s if isinstance(s, Stage) else Stage.parse(s) for s in self.order)
        if not order:
            raise ValueError("stage order must not be empty")
        if len(set(order)) != len(order):
            raise ValueError(f"duplicate stages in {[s.value for s in order]}")
        object.__setattr__(self, "order", order)
        check_real(self.conf_thresh, "conf_thresh", 0.0, 1.0)
        check_real(self.max_box_ratio, "max_box_ratio", 0.0, 1.0, low_inclusive=False)
        check_real(self.iou_thresh, "iou_thresh", 0.0, 1.0)
        check_real(self.rgbe_min, "rgbe_min", 0.0, 8.0)
        check_real(self.vlm_min, "vlm_min", 0.0, 1.0)
        check_real(self.editscore_min, "editscore_min", 0.0, 1.0)

    @property
    def needs_scorer(self) -> bool:
        return any(s.needs_scorer for s in self.order)

    def snapshot(self) -> dict:
        return {
            "stages": [s.value for s in self.order],
            "conf_thresh": self.conf_thresh,
            "max_box_ratio": self.max_box_ratio,
            "iou_thresh": self.iou_thresh,
            "rgbe_min": self.rgbe_min,
            "vlm_min": self.vlm_min,
            "editscore_min": self.editscore_min,
            "diff_params": {
                "threshold": self.diff_params.threshold,
                "median_radius": self.diff_params.median_radius,
                "erode_iters": self.diff_params.erode_iters,
                "dilate_iters": self.diff_params.dilate_iters,
                "se_radius": self.diff_params.se_radius,
            },
        }


class _Images:
    """Lazily loaded, validated image pair for one sample."""

    def __init__(self, s: SampleRecord, loader: Callable[[str], np.ndarray]):
        self._s = s
        self._loader = loader
        self._pair = None

    def pair(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pair is None:
            src = self._loader(self._s.src_path)
            dst = self._loader(self._s.dst_path)
            if src.shape != dst.shape:
                raise SampleError(f"src {src.shape[:2]} and dst {dst.shape[:2]} differ in size")
            h, w = src.shape[:2]
            for b in self._s.boxes:
                if not b.fits(w, h):
                    raise SampleError(f"box {b.as_list()} out of bounds for {w}x{h} image")
            self._pair = (src, dst)
        return self._pair

    @property
    def size(self) -> tuple[int, int]:
        src, _ = self.pair()
        return src.shape[1], src.shape[0]


def _images_for(s: SampleRecord, images) -> _Images:
    if images is None:
        return _Images(s, load_image)
    if isinstance(images, _Images):
        return images
    src, dst = images
    return _Images(s, {s.src_path: check_image(src), s.dst_path: check_image(dst)}.__getitem__)


def confidence_gate(s: SampleRecord, threshold: float = 0.7) -> tuple[bool, float | None]:
    """Detector confidence must reach ``threshold``; samples without one pass."""
    if s.detector_confidence is None:
        return True, None
    return s.detector_confidence >= threshold, float(s.detector_confidence)


def box_ratio_gate(s: SampleRecord, max_ratio: float = 0.9, images=None) -> tuple[bool, float]:
    w, h = _images_for(s, images).size
    ratio = max(box_area_ratio(b, w, h) for b in s.boxes)
    return ratio <= max_ratio, ratio


def iou_gate(s: SampleRecord, params: DiffParams | None = None, min_iou: float = 0.5, images=None) -> tuple[bool, float]:
    """IoU between the cleaned change mask and the rasterized box union."""
    src, dst = _images_for(s, images).pair()
    change = cleaned_change_mask(src, dst, params)
    if change.count(1) == 0:
        return False, 0.0
    boxes = roi_mask(s.boxes, src.shape[1], src.shape[0])
    iou = mask_iou(change, boxes, on_value=1)
    return iou >= min_iou, iou


def rgbe_gate(s: SampleRecord, min_entropy: float = 3.0, images=None) -> tuple[bool, float]:
    src, _ = _images_for(s, images).pair()
    e = rgb_entropy(src)
    return e >= min_entropy, e


def _with_instruction(rubric: str, instruction: str) -> str:
    return f"{rubric}\nInstruction: {instruction}"


def vlm_global_gate(s, scorer: Scorer, rubric: str = DEFAULT_GLOBAL_RUBRIC, min_score: float = 0.7, images=None):
    src, dst = _images_for(s, images).pair()
    resp = scorer.score(ScoreRequest.build(ScoreKind.VLM_RUBRIC, (src, dst), _with_instruction(rubric, s.instruction)))
    value = clamp_scale(resp.raw, resp.scale_max)
    return value >= min_score, value


def vlm_local_gate(s, scorer: Scorer, rubric: str = DEFAULT_LOCAL_RUBRIC, min_score: float = 0.7, images=None):
    src, dst = _images_for(s, images).pair()
    region = union_bbox(s.boxes)
    req = ScoreRequest.build(ScoreKind.VLM_RUBRIC, (crop(src, region), crop(dst, region)), _with_instruction(rubric, s.instruction))
    resp = scorer.score(req)
    value = clamp_scale(resp.raw, resp.scale_max)
    return value >= min_score, value


def vlm_gates(
    s: SampleRecord,
    scorer: Scorer,
    rubric_global: str = DEFAULT_GLOBAL_RUBRIC,
    rubric_local: str = DEFAULT_LOCAL_RUBRIC,
    min_score: float = 0.7,
    images=None,
) -> tuple[bool, dict, Stage | None]:
    """Global then local judge pass; returns (passed, measurements, failing stage)."""
    images = _images_for(s, images)
    measurements = {}
    ok, measurements[Stage.VLM_GLOBAL] = vlm_global_gate(s, scorer, rubric_global, min_score, images)
    if not ok:
        return False, measurements, Stage.VLM_GLOBAL
    ok, measurements[Stage.VLM_LOCAL] = vlm_local_gate(s, scorer, rubric_local, min_score, images)
    return ok, measurements, None if ok else Stage.VLM_LOCAL


def edit_score_gate(s: SampleRecord, scorer: Scorer, min_score: float = 0.7, images=None) -> tuple[bool, float]:
    src, dst = _images_for(s, images).pair()
    resp = scorer.score(ScoreRequest.build(ScoreKind.EDIT_SCORE, (src, dst), s.instruction))
    value = clamp_scale(resp.raw, resp.scale_max)
    return value >= min_score, value


def _run_stage(stage: Stage, s: SampleRecord, cfg: StageConfig, scorer, images: _Images):
    if stage is Stage.CONFIDENCE:
        return confidence_gate(s, cfg.conf_thresh)
    if stage is Stage.BOX_RATIO:
        return box_ratio_gate(s, cfg.max_box_ratio, images)
    if stage is Stage.IOU:
        return iou_gate(s, cfg.diff_params, cfg.iou_thresh, images)
    if stage is Stage.RGBE:
        return rgbe_gate(s, cfg.rgbe_min, images)
    if stage is Stage.VLM_GLOBAL:
        return vlm_global_gate(s, scorer, cfg.rubric_global, cfg.vlm_min, images)
    if stage is Stage.VLM_LOCAL:
        return vlm_local_gate(s, scorer, cfg.rubric_local, cfg.vlm_min, images)
    return edit_score_gate(s, scorer, cfg.editscore_min, images)


def refine_sample(
    s: SampleRecord,
    cfg: StageConfig,
    scorer: Scorer | None = None,
    loader: Callable[[str], np.ndarray] = load_image,
) -> FilterVerdict:
    images = _Images(s, loader)
    measurements = {}
    for stage in cfg.order:
        if stage.needs_scorer and scorer is None:
            return FilterVerdict(s.id, False, stage, measurements, "no scorer configured")
        try:
            ok, value = _run_stage(stage, s, cfg, scorer, images)
        except (SampleError, InvalidBoxError, ScorerError) as exc:
            return FilterVerdict(s.id, False, stage, measurements, f"{type(exc).__name__}: {exc}")
        measurements[stage] = value
        if not ok:
            return FilterVerdict(s.id, False, stage, measurements)
    return FilterVerdict(s.id, True, None, measurements)


def run_pipeline(
    samples: Iterable[SampleRecord],
    cfg: StageConfig,
    scorer: Scorer | None = None,
    workers: int = 1,
    loader: Callable[[str], np.ndarray] = load_image,
) -> Iterator[FilterVerdict]:
    """Yield one verdict per sample, in input order, using up to ``workers`` threads."""
    if workers <= 1:
        for s in samples:
            yield refine_sample(s, cfg, scorer, loader)
        return
    window = 4 * workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        for s in samples:
            pending.append(pool.submit(refine_sample, s, cfg, scorer, loader))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def summarize(verdicts: Sequence[FilterVerdict]) -> dict:
    counts = {"pass": 0, "reject": 0, "error": 0}
    by_stage = {s.value: 0 for s in Stage}
    for v in verdicts:
        counts[v.status] += 1
        if v.status == "reject":
            by_stage[Stage(v.rejected_at).value] += 1
    counts["input"] = len(verdicts)
    counts["rejected_at"] = by_stage
    return counts


def tighten(cfg: StageConfig, **deltas: float) -> StageConfig:
    """Stricter copy of ``cfg``: thresholds rise, ``max_box_ratio`` falls."""
    changes = {}
    for name, delta in deltas.items():
        if delta < 0:
            raise ValueError("tighten takes non-negative deltas")
        current = getattr(cfg, name)
        if name == "max_box_ratio":
            changes[name] = max(1e-9, current - delta)
        else:
            upper = 8.0 if name == "rgbe_min" else 1.0
            changes[name] = min(upper, current + delta)
    return replace(cfg, **changes)
