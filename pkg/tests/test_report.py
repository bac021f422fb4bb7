import json
import math
import random

import pytest

from finebench.cli import main as cli_main
from finebench.geometry import make_mask
from finebench.metrics import MetricValue, Region
from finebench.refine import CATEGORIES, SampleRecord, load_image, read_manifest
from finebench.report import (
    EvalConfig,
    EvalRow,
    aggregate,
    canonical_json,
    emit_report,
    evaluate_sample,
    render_csv,
    render_html,
)
from finebench.scorer import RetryPolicy, ScorerClient, StubScorer

from fixtures.make_golden import EXPECTED, build_inputs, eval_argv
from helpers import square_pair
from oracles import naive_psnr, naive_ssim


def row(i, category, **values):
    metrics = {n: MetricValue(n, v, Region.OUTSIDE_BOX, 10) for n, v in values.items()}
    return EvalRow(f"r{i:03d}", category, metrics)


def random_rows(seed, n=40):
    rng = random.Random(seed)
    return [
        row(i, rng.choice(CATEGORIES[:4]), psnr_bg=rng.uniform(20, 60), pc=rng.uniform(0, 5))
        for i in range(n)
    ]


class TestAggregate:
    def test_weighted_mean_identity(self):
        rows = random_rows(0)
        rep = aggregate(rows)
        for metric in ("psnr_bg", "pc"):
            counts = {c: rep.counts["metric_counts"][c][metric] for c in rep.per_category}
            weighted = math.fsum(rep.per_category[c][metric] * counts[c] for c in counts) / sum(counts.values())
            assert weighted == pytest.approx(rep.overall[metric], abs=1e-9)

    def test_row_order_does_not_matter(self):
        rows = random_rows(1)
        a = canonical_json(aggregate(rows).to_json())
        random.Random(2).shuffle(rows)
        assert canonical_json(aggregate(rows).to_json()) == a

    def test_errors_are_excluded_and_counted(self):
        rows = [row(0, "Food", pc=4.0), row(1, "Food", pc=2.0)]
        rows.append(EvalRow("r002", "Food", {"pc": MetricValue("pc", None, Region.FULL_IMAGE, 1, error="TransportError: x")}))
        rows.append(EvalRow("r003", "Food", error="SampleError: missing"))
        rep = aggregate(rows)
        assert rep.overall["pc"] == 3.0
        assert rep.counts["errored"] == {"pc": 1}
        assert rep.counts["row_errors"] == 1 and rep.counts["samples"] == 4

    def test_rejects_empty_and_unknown(self):
        with pytest.raises(ValueError):
            aggregate([])
        with pytest.raises(ValueError):
            aggregate([row(0, "Cars", pc=1.0)])


class TestCanonicalJson:
    def test_format(self):
        assert canonical_json({"b": 1.0, "a": [1, None, True, "é"]}) == '{"a":[1,null,true,"é"],"b":1.000000}\n'
        assert canonical_json(-1e-9) == "0.000000\n"
        with pytest.raises(ValueError):
            canonical_json(float("nan"))

    def test_byte_stable(self, tmp_path):
        rows = random_rows(3)
        a = emit_report(aggregate(rows, EvalConfig().snapshot()), tmp_path / "a")
        b = emit_report(aggregate(list(reversed(rows)), EvalConfig().snapshot()), tmp_path / "b")
        for fmt in a:
            assert a[fmt].read_bytes() == b[fmt].read_bytes()


class TestRenderers:
    def test_single_category_html(self):
        html = render_html(aggregate([row(0, "Text", psnr_bg=30.0)]))
        assert html.count('<table class="category">') == 1
        assert html.count("<svg") == 1 and "30.000000" in html

    def test_html_one_table_per_category(self):
        rep = aggregate(random_rows(4))
        assert render_html(rep).count('<table class="category">') == len(rep.per_category)

    def test_csv(self):
        rows = [row(1, "Food", pc=1.5), EvalRow("r000", "Food", {"pc": MetricValue("pc", None, Region.FULL_IMAGE, 1, "x")})]
        assert render_csv(aggregate(rows)) == "id,category,pc\nr000,Food,ERROR\nr001,Food,1.500000\n"

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report(aggregate(random_rows(5, 3)), tmp_path, ["pdf"])


class TestEvaluateSample:
    def sample(self, tmp_path, boxes=((10, 10, 30, 30),)):
        return SampleRecord("e", "src.png", "dst.png", "make it red", [list(b) for b in boxes], "Objects")

    def test_rule_metrics_only(self, tmp_path):
        src, dst = square_pair()
        r = evaluate_sample(self.sample(tmp_path), dst, None, src=src)
        assert set(r.metrics) == {"psnr_bg", "ssim_bg"}
        assert r.metrics["psnr_bg"].value == 99.0 and r.metrics["ssim_bg"].value == pytest.approx(1.0)
        assert r.metrics["psnr_bg"].mask_pixels == 64 * 64 - 400

    def test_global_box_omits_background(self, tmp_path):
        src, dst = square_pair()
        stub = StubScorer()
        scorer = ScorerClient("s://", RetryPolicy(max_retries=0), transport=stub.transport)
        r = evaluate_sample(self.sample(tmp_path, [(0, 0, 64, 64)]), dst, scorer, src=src)
        assert set(r.metrics) == {"clip_roi", "pc", "vn", "pdi"}
        assert r.judge_models == ["stub-hash-v1"]

    def test_scorer_failure_marks_metric(self, tmp_path):
        src, dst = square_pair()
        stub = StubScorer(mode="script", script=["fail"] * 100)
        scorer = ScorerClient("s://", RetryPolicy(max_retries=0, backoff=0), transport=stub.transport)
        r = evaluate_sample(self.sample(tmp_path), dst, scorer, src=src)
        assert r.has_errors and r.metrics["pc"].value is None
        assert r.metrics["psnr_bg"].error is None


def run_golden(tmp_path, monkeypatch):
    monkeypatch.delenv("FINEBENCH_CACHE_DIR", raising=False)
    monkeypatch.delenv("FINEBENCH_SCORER_URL", raising=False)
    manifest, pred_dir = build_inputs(tmp_path / "in")
    out = tmp_path / "out"
    assert cli_main(eval_argv(manifest, pred_dir, out)) == 0
    return manifest, pred_dir, out


def golden_mismatches(out):
    return [n for n in ("report.json", "report.html", "report.csv") if (out / n).read_bytes() != (EXPECTED / n).read_bytes()]


class TestGolden:
    def test_byte_identical(self, tmp_path, monkeypatch):
        _, _, out = run_golden(tmp_path, monkeypatch)
        assert golden_mismatches(out) == []

    def test_rule_metrics_match_oracles(self, tmp_path, monkeypatch):
        manifest, pred_dir, out = run_golden(tmp_path, monkeypatch)
        report = json.loads((out / "report.json").read_text())
        by_id = {r["id"]: r for r in report["rows"]}
        for s in read_manifest(manifest):
            src, pred = load_image(s.src_path), load_image(pred_dir / f"{s.id}.png")
            bg = make_mask(s.boxes, src.shape[1], src.shape[0]).bits
            metrics = by_id[s.id]["metrics"]
            if not bg.any():
                assert "psnr_bg" not in metrics
                continue
            assert metrics["psnr_bg"]["value"] == pytest.approx(naive_psnr(src, pred, bg), abs=1e-6)
            assert metrics["ssim_bg"]["value"] == pytest.approx(naive_ssim(src, pred, bg), abs=1e-6)

    def test_rows_file_reproduces_report(self, tmp_path, monkeypatch):
        _, _, out = run_golden(tmp_path, monkeypatch)
        again = tmp_path / "again"
        code = cli_main(["report", "--rows", str(out / "rows.jsonl"), "--out-dir", str(again)])
        assert code == 0
        assert (again / "report.csv").read_bytes() == (out / "report.csv").read_bytes()
