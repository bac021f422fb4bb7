"""``finebench`` command line: derive-bbox, refine, eval, reward, report.

Every subcommand reads and writes JSON lines so stages compose through files.
Exit codes: 0 success, 2 when some samples errored (outputs still written),
1 on fatal configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

from .morphology import DiffParams, ExtractionMode, cleaned_change_mask, extract_bbox
from .refine import (
    DEFAULT_ORDER,
    SampleError,
    Stage,
    StageConfig,
    load_image,
    read_manifest,
    run_pipeline,
    summarize,
)
from .report import EvalConfig, EvalRow, aggregate, emit_report, safe_evaluate, canonical_json
from .reward import DEFAULT_BG_RUBRIC, DEFAULT_ROI_RUBRIC, candidate_from_boxes, load_rubrics, score_group
from .scorer import ENV_CACHE_DIR, ENV_SCORER_URL, RetryPolicy, ScorerError, make_scorer

log = logging.getLogger("finebench")

EXIT_OK, EXIT_FATAL, EXIT_SAMPLE_ERRORS = 0, 1, 2


class ConfigError(Exception):
    pass


def _json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return rows


def _add_scorer_args(p, required_hint: bool = True):
    p.add_argument("--scorer-url", default=None, help=f"judge endpoint (default ${ENV_SCORER_URL}); 'stub:hash' uses the offline stub")
    p.add_argument("--cache-dir", default=None, help=f"response cache directory (default ${ENV_CACHE_DIR})")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--max-in-flight", type=int, default=8)
    p.add_argument("--model-pin", default=None, help="reject responses from any other judge model_id")


def _scorer_from(args):
    policy = RetryPolicy(timeout=args.timeout, max_retries=args.max_retries)
    try:
        return make_scorer(
            args.scorer_url,
            cache_dir=args.cache_dir,
            policy=policy,
            max_in_flight=args.max_in_flight,
            model_pin=args.model_pin,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _diff_params(args) -> DiffParams:
    return DiffParams(
        threshold=args.diff_thresh,
        median_radius=args.median_radius,
        erode_iters=args.erode,
        dilate_iters=args.dilate,
        se_radius=args.se_radius,
    )


def _add_diff_args(p):
    d = DiffParams()
    p.add_argument("--diff-thresh", type=int, default=d.threshold)
    p.add_argument("--median-radius", type=int, default=d.median_radius)
    p.add_argument("--erode", type=int, default=d.erode_iters)
    p.add_argument("--dilate", type=int, default=d.dilate_iters)
    p.add_argument("--se-radius", type=int, default=d.se_radius)


def cmd_derive_bbox(args) -> int:
    params = _diff_params(args)
    mode = ExtractionMode(args.mode)
    base = Path(args.manifest).parent
    entries = _read_jsonl(args.manifest)

    def one(d):
        out = {"id": d["id"], "iters_used": {"erode": params.erode_iters, "dilate": params.dilate_iters}}
        try:
            src = load_image(base / d["src_path"])
            dst = load_image(base / d["dst_path"])
            m = cleaned_change_mask(src, dst, params)
        except (SampleError, ValueError, KeyError) as exc:
            out.update(bbox=None, mask_area=0, error=f"{type(exc).__name__}: {exc}")
            return out
        box = extract_bbox(m, mode)
        out.update(bbox=None if box is None else box.as_list(), mask_area=m.count(1))
        return out

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(one, entries))
    with _open_out(args.out) as fh:
        for r in results:
            fh.write(_json_line(r))
    return EXIT_SAMPLE_ERRORS if any("error" in r for r in results) else EXIT_OK


def cmd_refine(args) -> int:
    stages = [Stage.parse(s) for s in args.stages.split(",") if s.strip()] if args.stages else list(DEFAULT_ORDER)
    rubrics = {}
    if args.rubric_file:
        data = json.loads(Path(args.rubric_file).read_text(encoding="utf-8"))
        rubrics = {k: data[v] for k, v in (("rubric_global", "global"), ("rubric_local", "local")) if v in data}
    cfg = StageConfig(
        order=tuple(stages),
        conf_thresh=args.conf_thresh,
        max_box_ratio=args.max_box_ratio,
        iou_thresh=args.iou_thresh,
        rgbe_min=args.rgbe_min,
        vlm_min=args.vlm_min,
        editscore_min=args.editscore_min,
        diff_params=_diff_params(args),
        **rubrics,
    )
    scorer = _scorer_from(args)
    if cfg.needs_scorer and scorer is None:
        raise ConfigError("stages " + ",".join(s.value for s in cfg.order if s.needs_scorer) + " need --scorer-url")
    samples = read_manifest(args.manifest)
    verdicts = []
    with _open_out(args.out) as fh:
        for v in run_pipeline(samples, cfg, scorer, workers=args.workers):
            verdicts.append(v)
            fh.write(_json_line(v.to_json()))
    summary = summarize(verdicts)
    log.info("refine: %s", json.dumps(summary, sort_keys=True))
    return EXIT_SAMPLE_ERRORS if summary["error"] else EXIT_OK


def cmd_eval(args) -> int:
    scorer = None
    if not args.no_scorer:
        scorer = _scorer_from(args)
        if scorer is None:
            raise ConfigError(f"no judge configured: pass --scorer-url, set ${ENV_SCORER_URL}, or use --no-scorer")
    cfg = EvalConfig(use_scorer=not args.no_scorer)
    samples = read_manifest(args.manifest)
    pred_dir = Path(args.pred_dir)

    def one(s):
        return safe_evaluate(s, pred_dir / f"{s.id}.png", scorer, cfg)

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        rows = list(pool.map(one, samples))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with _open_out(out_dir / "rows.jsonl") as fh:
        for r in rows:
            fh.write(canonical_json(r.to_json()))
    report = aggregate(rows, cfg.snapshot())
    emit_report(report, out_dir, args.formats.split(","))
    return EXIT_SAMPLE_ERRORS if any(r.has_errors for r in rows) else EXIT_OK


def cmd_reward(args) -> int:
    scorer = _scorer_from(args)
    if scorer is None:
        raise ConfigError(f"reward needs a judge: pass --scorer-url or set ${ENV_SCORER_URL}")
    roi_rubric, bg_rubric = load_rubrics(args.rubric_file) if args.rubric_file else (DEFAULT_ROI_RUBRIC, DEFAULT_BG_RUBRIC)
    base = Path(args.group_manifest).parent
    groups: dict = {}
    for d in _read_jsonl(args.group_manifest):
        groups.setdefault(str(d["group_id"]), []).append(d)
    failed = 0
    with _open_out(args.out) as fh:
        for gid, entries in groups.items():
            try:
                candidates = [
                    candidate_from_boxes(
                        str(e["candidate_id"]), load_image(base / e["src_path"]), load_image(base / e["dst_path"]), e["boxes"]
                    )
                    for e in entries
                ]
                group = score_group(
                    gid, candidates, scorer, roi_rubric, bg_rubric, args.group_size, args.epsilon, workers=args.workers
                )
            except (SampleError, ScorerError, ValueError, KeyError) as exc:
                failed += 1
                log.error("group %s failed: %s", gid, exc)
                continue
            for rec in group.records():
                fh.write(_json_line(rec))
    return EXIT_SAMPLE_ERRORS if failed else EXIT_OK


def cmd_report(args) -> int:
    rows = [EvalRow.from_json(d) for d in _read_jsonl(args.rows)]
    if not rows:
        raise ConfigError(f"{args.rows} holds no rows")
    config = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else EvalConfig().snapshot()
    emit_report(aggregate(rows, config), args.out_dir, args.formats.split(","))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finebench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("derive-bbox", help="derive edit boxes from before/after pairs")
    p.add_argument("--manifest", required=True, help="JSONL with id, src_path, dst_path")
    p.add_argument("--out", default="-")
    _add_diff_args(p)
    p.add_argument("--mode", choices=[m.value for m in ExtractionMode], default=ExtractionMode.MAX_RECT.value)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_derive_bbox)

    p = sub.add_parser("refine", help="run the sequential data-refinement filters")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--stages", default=None, help="comma-separated stage names (default: all, in canonical order)")
    p.add_argument("--conf-thresh", type=float, default=0.7)
    p.add_argument("--max-box-ratio", type=float, default=0.9)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--rgbe-min", type=float, default=3.0)
    p.add_argument("--vlm-min", type=float, default=0.7)
    p.add_argument("--editscore-min", type=float, default=0.7)
    p.add_argument("--rubric-file", default=None, help='JSON {"global": ..., "local": ...}')
    _add_diff_args(p)
    _add_scorer_args(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score predicted edits and write the benchmark report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True, help="directory holding <id>.png predictions")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-scorer", action="store_true", help="rule-based metrics only")
    p.add_argument("--formats", default="json,html,csv")
    _add_scorer_args(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reward", help="decoupled rewards and group-relative advantages")
    p.add_argument("--group-manifest", required=True, help="JSONL: group_id, candidate_id, src_path, dst_path, boxes")
    p.add_argument("--group-size", type=int, default=16)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--rubric-file", default=None, help='JSON {"c1": ..., "c2": ..., "scale_max": 5}')
    p.add_argument("--out", default="-")
    _add_scorer_args(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("report", help="aggregate eval rows into report files")
    p.add_argument("--rows", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config snapshot to embed")
    p.add_argument("--formats", default="json,html,csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
