import json

import numpy as np
import pytest
from PIL import Image

from clickremoval.evaluation import (GaussianPixelMetrics, BenchmarkRecord,
                                     MetricReport, clickremoval_runner,
                                     load_records, local_crop, main,
                                     run_benchmark)


class TestLocalCrop:
    def test_large_bbox_uses_longer_side(self):
        img = np.zeros((600, 600, 3))
        crop = local_crop(img, (50, 100, 400, 200))
        assert crop.shape[:2] == (400, 400)

    def test_small_bbox_clamps_to_minimum(self):
        img = np.zeros((512, 512, 3))
        crop = local_crop(img, (200, 200, 100, 80))
        assert crop.shape[:2] == (299, 299)

    def test_corner_bbox_translates_in_bounds(self):
        # bbox centered at (50, 50): the 299-square would start at -99,
        # so the crop shifts to start at the image origin
        img = np.arange(512 * 512 * 3, dtype=np.float64).reshape(512, 512, 3)
        crop = local_crop(img, (25, 25, 50, 50))
        assert crop.shape[:2] == (299, 299)
        assert np.array_equal(crop, img[0:299, 0:299])

    def test_side_clamps_to_short_image_side(self):
        img = np.zeros((200, 640, 3))
        crop = local_crop(img, (10, 10, 50, 50))
        assert crop.shape[:2] == (200, 200)

    def test_bbox_outside_image_rejected(self):
        img = np.zeros((300, 300, 3))
        with pytest.raises(ValueError):
            local_crop(img, (250, 250, 100, 100))
        with pytest.raises(ValueError):
            local_crop(img, (0, 0, 0, 10))

    def test_random_bboxes_square_in_bounds_and_centered(self, rng):
        for _ in range(100):
            ih = int(rng.integers(310, 900))
            iw = int(rng.integers(310, 900))
            w = int(rng.integers(1, iw))
            h = int(rng.integers(1, ih))
            x = int(rng.integers(0, iw - w + 1))
            y = int(rng.integers(0, ih - h + 1))
            img = np.zeros((ih, iw, 3))
            crop = local_crop(img, (x, y, w, h))
            side = min(max(max(w, h), 299), min(ih, iw))
            assert crop.shape[:2] == (side, side)
            # the square must contain the bbox center
            cx, cy = x + w // 2, y + h // 2
            ox = min(max(cx - side // 2, 0), iw - side)
            oy = min(max(cy - side // 2, 0), ih - side)
            assert ox <= cx <= ox + side and oy <= cy <= oy + side


class TestGaussianPixelMetrics:
    def test_identical_sets_score_zero(self, rng):
        imgs = [rng.random((64, 64, 3)) for _ in range(8)]
        metrics = GaussianPixelMetrics()
        assert metrics.fid(imgs, imgs) < 1e-5
        assert metrics.kid(imgs, imgs) < 1e-5

    def test_disjoint_sets_score_positive(self, rng):
        a = [rng.random((64, 64, 3)) for _ in range(8)]
        b = [np.clip(img + 0.3, 0, 1) for img in a]
        metrics = GaussianPixelMetrics()
        assert metrics.fid(a, b) > 1e-3
        assert metrics.kid(a, b) > 1e-3

    def test_deterministic(self, rng):
        a = [rng.random((32, 32, 3)) for _ in range(4)]
        b = [rng.random((32, 32, 3)) for _ in range(4)]
        metrics = GaussianPixelMetrics()
        assert metrics.fid(a, b) == metrics.fid(a, b)
        assert metrics.kid(a, b) == metrics.kid(a, b)

    def test_crop_resize_toggle_changes_features(self, rng):
        a = [rng.random((310, 310, 3)) for _ in range(4)]
        b = [rng.random((350, 350, 3)) for _ in range(4)]
        with_resize = GaussianPixelMetrics(resize_crops=True).fid(a, b, crops=True)
        without = GaussianPixelMetrics(resize_crops=False).fid(a, b, crops=True)
        assert np.isfinite(with_resize) and np.isfinite(without)


def write_records(tmp_path, n, image_side=350):
    rng = np.random.default_rng(42)
    paths = []
    for i in range(n):
        base = rng.uniform(0.3, 0.7) * np.ones((image_side, image_side, 3))
        src = base.copy()
        src[40:120, 40:120] = 0.95
        for name, arr in (("src", src), ("ref", base)):
            p = tmp_path / f"{name}_{i}.png"
            Image.fromarray((arr * 255).astype(np.uint8)).save(p)
            paths.append(p)
        rec = {"source": str(tmp_path / f"src_{i}.png"),
               "reference": str(tmp_path / f"ref_{i}.png"),
               "clicks": [{"u": 0.22, "v": 0.22, "polarity": "+"}],
               "bbox": [40, 40, 80, 80]}
        with open(tmp_path / "records.jsonl", "a") as f:
            f.write(json.dumps(rec) + "\n")
    return str(tmp_path / "records.jsonl")


class TestRunBenchmark:
    def test_zero_valid_records_raises(self, tmp_path):
        rec = BenchmarkRecord(source=str(tmp_path / "missing.png"),
                              reference=str(tmp_path / "missing.png"),
                              clicks=(), bbox=(0, 0, 10, 10))
        with pytest.raises(ValueError):
            run_benchmark([rec], lambda img, r: img, GaussianPixelMetrics())

    def test_missing_files_counted_as_skipped(self, tmp_path):
        path = write_records(tmp_path, 2)
        records = load_records(path)
        records.append(BenchmarkRecord(source="nope.png", reference="nope.png",
                                       clicks=(), bbox=(0, 0, 10, 10)))
        report = run_benchmark(records, lambda img, r: img,
                               GaussianPixelMetrics())
        assert report.sample_count == 2
        assert report.skipped == 1

    def test_identity_runner_scores_near_source(self, tmp_path):
        path = write_records(tmp_path, 3)
        report = run_benchmark(load_records(path), lambda img, r: img,
                               GaussianPixelMetrics())
        # identity leaves the object in place, so distances stay positive
        assert report.fid > 0
        assert report.mean_runtime >= 0

    def test_toy_pipeline_smoke(self, tmp_path):
        path = write_records(tmp_path, 20)
        records = load_records(path)
        runner = clickremoval_runner(preset="toy", r=1.0, seed=3)
        report = run_benchmark(records, runner, GaussianPixelMetrics())
        assert report.sample_count == 20
        assert report.skipped == 0
        assert np.isfinite(report.fid) and np.isfinite(report.kid)
        assert np.isfinite(report.local_fid)
        assert report.mean_runtime > 0

    def test_report_row_schema(self):
        report = MetricReport(fid=1.0, kid=2.0, local_fid=3.0,
                              mean_runtime=0.5, sample_count=4)
        row = report.as_row()
        assert set(row) == {"FID", "KID(x10^-3)", "Local-FID",
                            "Inference Time", "Samples", "Skipped"}

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            MetricReport(fid=0, kid=0, local_fid=0, mean_runtime=0,
                         sample_count=0)


def test_cli_entry_writes_report(tmp_path, capsys):
    records = write_records(tmp_path, 2)
    out = tmp_path / "report.json"
    main(["run", "--records", records, "--out", str(out), "--preset", "toy"])
    with open(out) as f:
        report = json.load(f)
    assert "clickremoval" in report
    assert report["clickremoval"]["Samples"] == 2
    printed = json.loads(capsys.readouterr().out.strip())
    assert printed == report
