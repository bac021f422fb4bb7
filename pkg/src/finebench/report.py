"""Benchmark evaluation rows, aggregation and report files (json, html, csv)."""

from __future__ import annotations

import csv
import html
import io
import json
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._validation import check_image, check_same_hw
from .geometry import apply_mask, crop, make_mask, union_bbox
from .metrics import (
    METRIC_NAMES,
    PSNR_CAP,
    SSIM_C1,
    SSIM_C2,
    SSIM_WINDOW,
    MetricValue,
    Region,
    psnr,
    ssim,
)
from .refine import CATEGORIES, SampleRecord, SampleError, load_image
from .scorer import ScoreKind, ScoreRequest, Scorer, ScorerError

FLOAT_DIGITS = 6

DEFAULT_EVAL_RUBRICS = {
    "pc": "Rate from 0 to 5 how completely the edited image (second) carries out the instruction.",
    "vn": "Rate from 0 to 5 how natural and artifact-free the edited image (second) looks.",
    "pdi": "Rate from 0 to 5 the physical plausibility and detail integrity of the edited image (second).",
    "obr": "Everything inside the edit boxes is blacked out. Rate from 0 to 5 how well the "
    "remaining content of the original (first) is retained in the edited image (second).",
}


@dataclass(frozen=True)
class EvalConfig:
    use_scorer: bool = True
    rubrics: dict = field(default_factory=lambda: dict(DEFAULT_EVAL_RUBRICS))

    def snapshot(self) -> dict:
        return {
            "psnr_cap": PSNR_CAP,
            "ssim_window": SSIM_WINDOW,
            "ssim_c1": SSIM_C1,
            "ssim_c2": SSIM_C2,
            "use_scorer": self.use_scorer,
            "rubrics": dict(self.rubrics),
        }


@dataclass
class EvalRow:
    id: str
    category: str
    metrics: dict = field(default_factory=dict)
    judge_models: list = field(default_factory=list)
    error: str | None = None

    @property
    def has_errors(self) -> bool:
        return self.error is not None or any(m.error is not None for m in self.metrics.values())

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "category": self.category,
            "metrics": {k: v.to_json() for k, v in self.metrics.items()},
            "judge_models": sorted(set(self.judge_models)),
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_json(cls, d: dict) -> "EvalRow":
        return cls(
            id=d["id"],
            category=d["category"],
            metrics={k: MetricValue.from_json(v) for k, v in d.get("metrics", {}).items()},
            judge_models=list(d.get("judge_models", [])),
            error=d.get("error"),
        )


class _ModelRecorder:
    def __init__(self, scorer: Scorer):
        self._scorer = scorer
        self.models: set = set()
        self._lock = threading.Lock()

    def score(self, req):
        resp = self._scorer.score(req)
        with self._lock:
            self.models.add(resp.model_id)
        return resp


def evaluate_sample(
    s: SampleRecord,
    predicted,
    scorer: Scorer | None = None,
    cfg: EvalConfig | None = None,
    src=None,
) -> EvalRow:
    """Metrics for one predicted edit against its source image.

    Background metrics use the pixels outside every box and are omitted for
    full-canvas edits. Judge metrics are omitted when no scorer is used; a
    failing judge call marks that metric as errored.
    """
    cfg = cfg or EvalConfig()
    src = check_image(load_image(s.src_path) if src is None else src, "src")
    pred = check_image(predicted, "predicted")
    check_same_hw(src.shape, pred.shape, "src", "predicted")
    h, w = src.shape[:2]
    bg = make_mask(s.boxes, w, h)
    roi = bg.complement()
    n_bg, n_roi = bg.count(1), roi.count(1)
    row = EvalRow(s.id, s.category)
    metrics = row.metrics
    if n_bg:
        metrics["psnr_bg"] = MetricValue("psnr_bg", psnr(src, pred, bg), Region.OUTSIDE_BOX, n_bg)
        metrics["ssim_bg"] = MetricValue("ssim_bg", ssim(src, pred, bg), Region.OUTSIDE_BOX, n_bg)
    if scorer is None or not cfg.use_scorer:
        return row

    recorder = _ModelRecorder(scorer)
    src_bg, pred_bg = apply_mask(src, bg), apply_mask(pred, bg)
    region = union_bbox(s.boxes)
    text = s.instruction
    requests = {}
    if n_bg:
        requests["lpips_bg"] = (ScoreRequest.build(ScoreKind.LPIPS, (src_bg, pred_bg)), Region.OUTSIDE_BOX, n_bg)
    requests["clip_roi"] = (
        ScoreRequest.build(ScoreKind.CLIP_TEXT, (crop(pred, region),), text or "edited region"),
        Region.INSIDE_BOX,
        n_roi,
    )
    for name in ("pc", "vn", "pdi"):
        prompt = f"{cfg.rubrics[name]}\nInstruction: {text}"
        requests[name] = (ScoreRequest.build(ScoreKind.VLM_RUBRIC, (src, pred), prompt), Region.FULL_IMAGE, h * w)
    if n_bg:
        prompt = f"{cfg.rubrics['obr']}\nInstruction: {text}"
        requests["obr"] = (ScoreRequest.build(ScoreKind.VLM_RUBRIC, (src_bg, pred_bg), prompt), Region.OUTSIDE_BOX, n_bg)
    for name, (req, region_kind, n) in requests.items():
        try:
            value = recorder.score(req).raw
            metrics[name] = MetricValue(name, value, region_kind, n)
        except ScorerError as exc:
            metrics[name] = MetricValue(name, None, region_kind, n, error=f"{type(exc).__name__}: {exc}")
    row.judge_models = sorted(recorder.models)
    return row


def _ordered_metric_names(names: Iterable[str]) -> list[str]:
    names = set(names)
    known = [n for n in METRIC_NAMES if n in names]
    return known + sorted(names - set(METRIC_NAMES))


@dataclass
class MetricReport:
    rows: list
    per_category: dict
    overall: dict
    counts: dict
    config: dict

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "counts": self.counts,
            "overall": self.overall,
            "per_category": self.per_category,
            "rows": [r.to_json() for r in self.rows],
        }


def aggregate(rows: Sequence[EvalRow], config: dict | None = None) -> MetricReport:
    """Per-category and overall means; errored entries are excluded and counted."""
    if not rows:
        raise ValueError("cannot aggregate zero rows")
    rows = sorted(rows, key=lambda r: r.id)
    for r in rows:
        if r.category not in CATEGORIES:
            raise ValueError(f"row {r.id!r} has unknown category {r.category!r}")
    names = _ordered_metric_names(n for r in rows for n in r.metrics)
    values: dict = {}
    errors = {n: 0 for n in names}
    samples = {}
    for r in rows:
        samples[r.category] = samples.get(r.category, 0) + 1
        for n, mv in r.metrics.items():
            if mv.error is not None or mv.value is None:
                errors[n] += 1
                continue
            values.setdefault(r.category, {}).setdefault(n, []).append(mv.value)
    per_category = {}
    metric_counts = {}
    for cat in sorted(samples):
        per_category[cat] = {n: math.fsum(v) / len(v) for n, v in sorted(values.get(cat, {}).items())}
        metric_counts[cat] = {n: len(v) for n, v in sorted(values.get(cat, {}).items())}
    overall = {}
    for n in names:
        pooled = [v for cat in values.values() for v in cat.get(n, [])]
        if pooled:
            overall[n] = math.fsum(pooled) / len(pooled)
    models = sorted({m for r in rows for m in r.judge_models})
    counts = {
        "samples": len(rows),
        "samples_per_category": dict(sorted(samples.items())),
        "metric_counts": metric_counts,
        "errored": {n: c for n, c in errors.items() if c},
        "row_errors": sum(1 for r in rows if r.error is not None),
    }
    config = dict(config or {})
    config["judge_models"] = models
    return MetricReport(rows, per_category, overall, counts, config)


def _canonical(obj, out: list) -> None:
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite value {x} in report")
        s = f"{x:.{FLOAT_DIGITS}f}"
        out.append("0.000000" if s == "-0.000000" else s)
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, k in enumerate(sorted(obj)):
            if i:
                out.append(",")
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(":")
            _canonical(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _canonical(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Sorted keys, compact separators, floats fixed at six decimals."""
    out: list = []
    _canonical(obj, out)
    return "".join(out) + "\n"


def _fmt(x) -> str:
    return "" if x is None else f"{float(x):.{FLOAT_DIGITS}f}"


def render_csv(report: MetricReport) -> str:
    names = _ordered_metric_names(n for r in report.rows for n in r.metrics)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "category", *names])
    for r in report.rows:
        cells = []
        for n in names:
            mv = r.metrics.get(n)
            if mv is None:
                cells.append("")
            elif mv.error is not None:
                cells.append("ERROR")
            else:
                cells.append(_fmt(mv.value))
        writer.writerow([r.id, r.category, *cells])
    return buf.getvalue()


def _bar_chart(metric: str, per_category: dict) -> str:
    items = [(cat, vals[metric]) for cat, vals in per_category.items() if metric in vals]
    if not items:
        return ""
    top = max(abs(v) for _, v in items) or 1.0
    bar_h, label_w, width = 18, 120, 300
    parts = [
        f'<svg class="chart" xmlns="http://www.w3.org/2000/svg" width="{label_w + width + 90}" '
        f'height="{bar_h * len(items) + 4}" role="img" aria-label="{html.escape(metric)}">'
    ]
    for i, (cat, v) in enumerate(items):
        y = i * bar_h + 2
        w = round(width * max(0.0, v) / top, 2)
        parts.append(
            f'<text x="0" y="{y + 13}" font-size="12">{html.escape(cat)}</text>'
            f'<rect x="{label_w}" y="{y}" width="{w}" height="{bar_h - 4}" fill="#4a78b5"/>'
            f'<text x="{label_w + w + 4}" y="{y + 13}" font-size="12">{_fmt(v)}</text>'
        )
    parts.append("</svg>")
    return "".join(parts)


def render_html(report: MetricReport) -> str:
    names = _ordered_metric_names(report.overall)
    out = [
        "<!DOCTYPE html>",
        '<html lang="en"><head><meta charset="utf-8"><title>finebench report</title>',
        "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin:1em 0}"
        "td,th{border:1px solid #ccc;padding:4px 8px;text-align:right}th:first-child,td:first-child{text-align:left}"
        "</style></head><body>",
        "<h1>Benchmark report</h1>",
        f"<p>{report.counts['samples']} samples in {len(report.per_category)} categories.</p>",
        "<h2>Overall</h2>",
        '<table class="overall"><tr><th>metric</th><th>mean</th></tr>',
    ]
    for n in names:
        out.append(f"<tr><td>{html.escape(n)}</td><td>{_fmt(report.overall[n])}</td></tr>")
    out.append("</table>")
    for cat, vals in report.per_category.items():
        counts = report.counts["metric_counts"].get(cat, {})
        out.append(f"<h2>{html.escape(cat)}</h2>")
        out.append('<table class="category"><tr><th>metric</th><th>mean</th><th>n</th></tr>')
        for n in _ordered_metric_names(vals):
            out.append(f"<tr><td>{html.escape(n)}</td><td>{_fmt(vals[n])}</td><td>{counts.get(n, 0)}</td></tr>")
        out.append("</table>")
    out.append("<h2>Per-category means</h2>")
    for n in names:
        out.append(f"<h3>{html.escape(n)}</h3>")
        out.append(_bar_chart(n, report.per_category))
    out.append("</body></html>")
    return "\n".join(out) + "\n"


def emit_report(report: MetricReport, out_dir: str | os.PathLike, formats: Iterable[str] = ("json", "html", "csv")) -> dict:
    """Write the requested formats into ``out_dir``; returns format -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    renderers = {
        "json": lambda: canonical_json(report.to_json()),
        "html": lambda: render_html(report),
        "csv": lambda: render_csv(report),
    }
    written = {}
    for fmt in formats:
        if fmt not in renderers:
            raise ValueError(f"unknown report format {fmt!r}")
        path = out_dir / f"report.{fmt}"
        path.write_text(renderers[fmt](), encoding="utf-8", newline="\n")
        written[fmt] = path
    return written


def error_row(s: SampleRecord, message: str) -> EvalRow:
    return EvalRow(s.id, s.category, error=message)


def safe_evaluate(s: SampleRecord, pred_path: Path, scorer, cfg: EvalConfig) -> EvalRow:
    try:
        return evaluate_sample(s, load_image(pred_path), scorer, cfg)
    except (SampleError, ValueError) as exc:
        return error_row(s, f"{type(exc).__name__}: {exc}")
