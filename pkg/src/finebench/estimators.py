"""scikit-learn compatible wrappers around the bbox, refinement and advantage code.

These follow the usual estimator contract: hyper-parameters are constructor
arguments stored verbatim (so ``get_params``/``set_params``/``clone`` work),
``fit`` validates them and sets trailing-underscore attributes, and the
work happens in ``transform``/``predict``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_same_hw
from .morphology import DiffParams, ExtractionMode, cleaned_change_mask, extract_bbox
from .refine import DEFAULT_ORDER, SampleRecord, StageConfig, load_image, run_pipeline
from .reward import group_advantage


def _pairs(X):
    for i, pair in enumerate(X):
        if len(pair) != 2:
            raise ValueError(f"X[{i}] must be a (src, dst) pair")
        src = check_image(pair[0], f"X[{i}][0]")
        dst = check_image(pair[1], f"X[{i}][1]")
        check_same_hw(src.shape, dst.shape, "src", "dst")
        yield src, dst


class BBoxDeriver(TransformerMixin, BaseEstimator):
    """Derive the edited region of (src, dst) image pairs.

    ``transform`` returns an ``(n, 4)`` float array of ``[x1, y1, x2, y2]``
    rows, NaN where a pair shows no change; ``derive`` returns the boxes
    themselves.

    >>> BBoxDeriver(mode="cc").get_params()["mode"]
    'cc'
    """

    def __init__(self, threshold=10, median_radius=1, erode_iters=1, dilate_iters=2, se_radius=1, mode="rect"):
        self.threshold = threshold
        self.median_radius = median_radius
        self.erode_iters = erode_iters
        self.dilate_iters = dilate_iters
        self.se_radius = se_radius
        self.mode = mode

    def fit(self, X=None, y=None):
        self.params_ = DiffParams(self.threshold, self.median_radius, self.erode_iters, self.dilate_iters, self.se_radius)
        self.mode_ = ExtractionMode(self.mode)
        return self

    def derive(self, X):
        check_is_fitted(self, "params_")
        return [extract_bbox(cleaned_change_mask(s, d, self.params_), self.mode_) for s, d in _pairs(X)]

    def transform(self, X):
        boxes = self.derive(X)
        out = np.full((len(boxes), 4), np.nan)
        for i, b in enumerate(boxes):
            if b is not None:
                out[i] = b.as_list()
        return out

    def mask_areas(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return np.array([cleaned_change_mask(s, d, self.params_).count(1) for s, d in _pairs(X)], dtype=np.int64)


class RefineFilter(BaseEstimator):
    """Sequential sample filter; ``predict`` gives a pass mask, ``transform`` the survivors."""

    def __init__(
        self,
        stages=DEFAULT_ORDER,
        conf_thresh=0.7,
        max_box_ratio=0.9,
        iou_thresh=0.5,
        rgbe_min=3.0,
        vlm_min=0.7,
        editscore_min=0.7,
        diff_params=None,
        scorer=None,
        workers=1,
        loader=load_image,
    ):
        self.stages = stages
        self.conf_thresh = conf_thresh
        self.max_box_ratio = max_box_ratio
        self.iou_thresh = iou_thresh
        self.rgbe_min = rgbe_min
        self.vlm_min = vlm_min
        self.editscore_min = editscore_min
        self.diff_params = diff_params
        self.scorer = scorer
        self.workers = workers
        self.loader = loader

    def fit(self, X=None, y=None):
        self.config_ = StageConfig(
            order=tuple(self.stages),
            conf_thresh=self.conf_thresh,
            max_box_ratio=self.max_box_ratio,
            iou_thresh=self.iou_thresh,
            rgbe_min=self.rgbe_min,
            vlm_min=self.vlm_min,
            editscore_min=self.editscore_min,
            diff_params=self.diff_params or DiffParams(),
        )
        if self.config_.needs_scorer and self.scorer is None:
            raise ValueError("the configured stages need a scorer")
        return self

    def verdicts(self, X):
        check_is_fitted(self, "config_")
        samples = [s if isinstance(s, SampleRecord) else SampleRecord.from_json(s) for s in X]
        return list(run_pipeline(samples, self.config_, self.scorer, self.workers, self.loader))

    def predict(self, X) -> np.ndarray:
        return np.array([v.passed for v in self.verdicts(X)], dtype=bool)

    def transform(self, X):
        X = list(X)
        return [s for s, keep in zip(X, self.predict(X)) if keep]

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)


class GroupAdvantage(TransformerMixin, BaseEstimator):
    """Turn a flat reward vector, laid out group after group, into advantages."""

    def __init__(self, group_size=16, epsilon=1e-6):
        self.group_size = group_size
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        if int(self.group_size) < 1:
            raise ValueError("group_size must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.group_size_ = int(self.group_size)
        return self

    def transform(self, X):
        check_is_fitted(self, "group_size_")
        r = np.asarray(X, dtype=np.float64).ravel()
        if r.size % self.group_size_:
            raise ValueError(f"{r.size} rewards do not split into groups of {self.group_size_}")
        groups = r.reshape(-1, self.group_size_)
        return np.array([group_advantage(g, self.epsilon) for g in groups]).ravel()
