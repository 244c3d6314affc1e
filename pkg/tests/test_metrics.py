import numpy as np
import pytest

from boxseg.dataset import DatasetManifest, ManifestEntry
from boxseg.errors import DataError
from boxseg.metrics import compute_quad, confusion_counts, score_mask_dir, summarize

from conftest import make_rect_mask, write_png
from reference import brute_force_quad, reference_summary


def _rand_mask(rng, h, w, p):
    return rng.random((h, w)) < p


class TestConfusion:
    def test_perfect(self):
        m = np.ones((4, 4), bool)
        c = confusion_counts(m, m)
        assert (c.tp, c.fp, c.fn, c.tn) == (16, 0, 0, 0)

    def test_pred_empty(self):
        c = confusion_counts(np.zeros((2, 2), bool), np.ones((2, 2), bool))
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 4, 0)

    def test_offset_squares(self):
        gt = make_rect_mask(8, 8, [(0, 0, 4, 4)]) >= 128
        pred = make_rect_mask(8, 8, [(2, 2, 6, 6)]) >= 128
        c = confusion_counts(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (4, 12, 12, 36)
        assert c.total == 64

    def test_dim_mismatch(self):
        with pytest.raises(DataError):
            confusion_counts(np.zeros((2, 2), bool), np.zeros((2, 3), bool))


class TestQuad:
    def test_perfect(self):
        m = np.ones((3, 3), bool)
        q = compute_quad(m, m)
        assert (q.dice, q.precision, q.recall, q.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_offset_squares(self):
        gt = make_rect_mask(8, 8, [(0, 0, 4, 4)]) >= 128
        pred = make_rect_mask(8, 8, [(2, 2, 6, 6)]) >= 128
        q = compute_quad(pred, gt)
        assert (q.dice, q.precision, q.recall, q.f1) == (0.25, 0.25, 0.25, 0.25)

    def test_convention_table(self):
        empty = np.zeros((3, 3), bool)
        full = np.ones((3, 3), bool)
        both_empty = compute_quad(empty, empty)
        assert (both_empty.dice, both_empty.precision, both_empty.recall, both_empty.f1) == (1, 1, 1, 1)
        pred_empty = compute_quad(empty, full)
        assert (pred_empty.dice, pred_empty.precision, pred_empty.recall, pred_empty.f1) == (0, 0, 0, 0)
        gt_empty = compute_quad(full, empty)
        assert (gt_empty.dice, gt_empty.precision, gt_empty.recall, gt_empty.f1) == (0, 0, 0, 0)

    def test_matches_pixel_loop_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(250):
            h, w = (int(v) for v in rng.integers(1, 64, size=2))
            pred = _rand_mask(rng, h, w, rng.uniform(0, 0.6))
            gt = _rand_mask(rng, h, w, rng.uniform(0, 0.6))
            q = compute_quad(pred, gt)
            want = brute_force_quad(pred, gt)
            assert (q.dice, q.precision, q.recall, q.f1) == want

    def test_dice_equals_f1(self):
        rng = np.random.default_rng(23)
        for _ in range(300):
            pred = _rand_mask(rng, 16, 16, 0.4)
            gt = _rand_mask(rng, 16, 16, 0.4)
            q = compute_quad(pred, gt)
            assert abs(q.dice - q.f1) <= 1e-12

    def test_symmetries(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            pred = _rand_mask(rng, 12, 12, 0.5)
            gt = _rand_mask(rng, 12, 12, 0.5)
            assert compute_quad(pred, gt).dice == pytest.approx(compute_quad(gt, pred).dice)
            assert compute_quad(pred, gt).precision == pytest.approx(compute_quad(gt, pred).recall)


class TestSummarize:
    def test_three_values(self):
        s = summarize([0.8, 0.9, 1.0])
        assert s.mean == pytest.approx(0.9)
        assert s.median == pytest.approx(0.9)
        assert s.std == pytest.approx(0.1)

    def test_single_value(self):
        s = summarize([0.42])
        assert (s.mean, s.median, s.std, s.n) == (0.42, 0.42, 0.0, 1)

    def test_outlier_example(self):
        s = summarize([1, 2, 3, 4, 100])
        assert (s.q1, s.median, s.q3) == (2.0, 3.0, 4.0)
        assert s.whisker_lo == 1.0 and s.whisker_hi == 4.0
        assert s.outliers == (100.0,)

    def test_matches_reference(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            n = int(rng.integers(1, 60))
            values = rng.normal(0, rng.uniform(0.1, 10), size=n).tolist()
            s = summarize(values)
            ref = reference_summary(values)
            for key in ("mean", "median", "std", "q1", "q3", "whisker_lo", "whisker_hi"):
                assert abs(getattr(s, key) - ref[key]) <= 1e-12, key
            assert list(s.outliers) == sorted(ref["outliers"])

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            summarize([])

    def test_invariant_ordering(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            s = summarize(rng.uniform(0, 1, size=int(rng.integers(2, 40))))
            assert s.whisker_lo <= s.q1 <= s.median <= s.q3 <= s.whisker_hi
            for o in s.outliers:
                assert o < s.whisker_lo or o > s.whisker_hi


class TestScoreMaskDir:
    def _manifest(self, tmp_path, masks):
        gt_dir = tmp_path / "gt"
        gt_dir.mkdir()
        entries = []
        for sample_id, mask in masks.items():
            write_png(gt_dir / f"{sample_id}.png", mask)
            img_path = gt_dir / f"{sample_id}_img.png"
            write_png(img_path, np.zeros_like(mask))
            entries.append(ManifestEntry(sample_id, str(img_path), str(gt_dir / f"{sample_id}.png")))
        return DatasetManifest("d", "ct", entries)

    def test_mirror_scores_ones(self, tmp_path):
        mask = make_rect_mask(16, 16, [(2, 2, 9, 9)])
        manifest = self._manifest(tmp_path, {"a": mask, "b": mask})
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        write_png(pred_dir / "a.png", mask)
        write_png(pred_dir / "b.png", mask)
        results = score_mask_dir(manifest, pred_dir)
        assert [sid for sid, _ in results] == ["a", "b"]
        assert all(q.dice == 1.0 and q.precision == 1.0 for _, q in results)

    def test_missing_scores_empty(self, tmp_path, caplog):
        mask = make_rect_mask(16, 16, [(2, 2, 9, 9)])
        manifest = self._manifest(tmp_path, {"a": mask})
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        with caplog.at_level("WARNING"):
            results = score_mask_dir(manifest, pred_dir)
        assert results[0][1].dice == 0.0
        assert any("no prediction mask" in r.message for r in caplog.records)

    def test_half_overlap(self, tmp_path):
        gt = make_rect_mask(8, 8, [(0, 0, 4, 4)])
        pred = make_rect_mask(8, 8, [(2, 2, 6, 6)])
        manifest = self._manifest(tmp_path, {"a": gt})
        pred_dir = tmp_path / "pred"
        pred_dir.mkdir()
        write_png(pred_dir / "a.png", pred)
        results = score_mask_dir(manifest, pred_dir)
        assert results[0][1].dice == 0.25
