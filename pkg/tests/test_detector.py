import numpy as np
import pytest

from boxseg.dataset import BBox
from boxseg.detector import Detection, decode_detections, iou, nms, run_detector
from boxseg.errors import ConfigError, ModelContractError
from boxseg.preprocess import LetterboxTransform

from reference import reference_nms


def _identity_t(size=640):
    return LetterboxTransform.centered(size, size, size)


class TestIou:
    def test_self(self):
        b = BBox(3, 4, 9, 11)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 5, 5), BBox(6, 6, 9, 9)) == 0.0

    def test_half_overlap(self):
        assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_symmetric_random(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            a = _rand_box(rng)
            b = _rand_box(rng)
            assert iou(a, b) == pytest.approx(iou(b, a))
            assert 0.0 <= iou(a, b) <= 1.0

    def test_equality_iff_identical(self):
        a = BBox(0, 0, 10, 10)
        assert iou(a, BBox(0, 0, 10, 10)) == 1.0
        assert iou(a, BBox(0, 0, 10, 9.5)) < 1.0


def _rand_box(rng, lim=100):
    x0, y0 = rng.uniform(0, lim - 2, size=2)
    return BBox(x0, y0, rng.uniform(x0 + 1, lim), rng.uniform(y0 + 1, lim))


class TestDecode:
    def test_single_column(self):
        raw = np.zeros((1, 5, 1), np.float32)
        raw[0, :, 0] = (320, 320, 100, 50, 0.9)
        dets = decode_detections(raw, _identity_t(), conf_thresh=0.5)
        assert len(dets) == 1
        assert dets[0].box.as_tuple() == (270.0, 295.0, 370.0, 345.0)
        assert dets[0].score == pytest.approx(0.9)

    def test_below_threshold_dropped(self):
        raw = np.zeros((1, 5, 1), np.float32)
        raw[0, :, 0] = (320, 320, 100, 50, 0.3)
        assert decode_detections(raw, _identity_t(), 0.5) == []

    def test_column_in_padding_dropped(self):
        t = LetterboxTransform.centered(320, 160, 640)  # pad_y 160: rows <160 are padding
        raw = np.zeros((1, 5, 1), np.float32)
        raw[0, :, 0] = (320, 80, 100, 100, 0.9)  # entirely inside top padding
        assert decode_detections(raw, t, 0.5) == []

    def test_conf_zero_keeps_nondegenerate(self):
        rng = np.random.default_rng(3)
        n = 40
        raw = np.zeros((1, 5, n), np.float32)
        raw[0, 0] = rng.uniform(100, 540, n)
        raw[0, 1] = rng.uniform(100, 540, n)
        raw[0, 2] = rng.uniform(2, 80, n)
        raw[0, 3] = rng.uniform(2, 80, n)
        raw[0, 4] = rng.uniform(0, 1, n)
        kept = decode_detections(raw, _identity_t(), 0.0)
        assert len(kept) == n
        # scores drawn from [0, 1) so the top of the allowed range keeps none
        assert decode_detections(raw, _identity_t(), 1.0) == []

    def test_class_argmax_tie_lowest(self):
        raw = np.zeros((1, 7, 1), np.float32)  # 3 classes
        raw[0, :4, 0] = (320, 320, 10, 10)
        raw[0, 4:, 0] = (0.8, 0.8, 0.2)
        dets = decode_detections(raw, _identity_t(), 0.5)
        assert dets[0].class_id == 0


class _FakeDetMeta:
    def __init__(self, num_classes=1, num_anchors=None):
        self.num_classes = num_classes
        self.num_anchors = num_anchors


class _FakeDetBackend:
    def __init__(self, tensor, meta):
        self.tensor = tensor
        self.metadata = meta

    def run(self, image):
        return self.tensor


class TestRunDetector:
    def test_stub_identity(self):
        raw = np.zeros((1, 5, 7), np.float32)
        backend = _FakeDetBackend(raw, _FakeDetMeta())
        out = run_detector(backend, np.zeros((1, 3, 64, 64), np.float32))
        assert np.array_equal(out, raw)

    def test_contract_violation(self):
        raw = np.zeros((1, 5, 1000), np.float32)
        backend = _FakeDetBackend(raw, _FakeDetMeta(num_anchors=8400))
        with pytest.raises(ModelContractError, match="contract"):
            run_detector(backend, np.zeros((1, 3, 64, 64), np.float32))

    def test_row_mismatch(self):
        raw = np.zeros((1, 6, 10), np.float32)
        backend = _FakeDetBackend(raw, _FakeDetMeta(num_classes=1))
        with pytest.raises(ModelContractError):
            run_detector(backend, np.zeros((1, 3, 64, 64), np.float32))


def _det(x0, y0, x1, y1, score):
    return Detection(BBox(x0, y0, x1, y1), score)


class TestNms:
    def test_single(self):
        d = _det(0, 0, 10, 10, 0.5)
        assert nms([d], 0.5) == [d]

    def test_overlapping_pair(self):
        a = _det(0, 0, 10, 10, 0.9)
        b = _det(1, 1, 11, 11, 0.8)
        assert iou(a.box, b.box) == pytest.approx(81 / 119)
        assert nms([a, b], 0.5) == [a]

    def test_disjoint_pair(self):
        a = _det(0, 0, 10, 10, 0.9)
        b = _det(20, 20, 30, 30, 0.8)
        assert nms([b, a], 0.5) == [a, b]  # sorted by score

    def test_threshold_validation(self):
        with pytest.raises(ConfigError):
            nms([], 0.0)

    def test_scores_non_increasing_and_no_kept_overlap(self):
        rng = np.random.default_rng(4)
        dets = [_det(*_coords(rng), rng.uniform(0, 1)) for _ in range(80)]
        kept = nms(dets, 0.4)
        scores = [d.score for d in kept]
        assert scores == sorted(scores, reverse=True)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert iou(a.box, b.box) < 0.4

    def test_matches_reference(self):
        rng = np.random.default_rng(5)
        for trial in range(40):
            n = int(rng.integers(1, 120))
            dets = []
            tuples = []
            for _ in range(n):
                x0, y0, x1, y1 = _coords(rng)
                score = round(float(rng.uniform(0, 1)), 2)  # rounded to force score ties
                dets.append(_det(x0, y0, x1, y1, score))
                tuples.append((x0, y0, x1, y1, score))
            thresh = float(rng.uniform(0.2, 0.8))
            kept = nms(dets, thresh)
            want = [tuples[i] for i in reference_nms(tuples, thresh)]
            got = [(d.box.x0, d.box.y0, d.box.x1, d.box.y1, d.score) for d in kept]
            assert got == want


def _coords(rng, lim=60):
    x0, y0 = rng.uniform(0, lim, size=2)
    return (float(x0), float(y0), float(x0 + rng.uniform(2, 25)), float(y0 + rng.uniform(2, 25)))
