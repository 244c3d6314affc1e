import numpy as np
import pytest

from boxseg.dataset import BBox
from boxseg.errors import ConfigError, DataError
from boxseg.preprocess import (
    LetterboxTransform,
    NormalizationSpec,
    augment,
    letterbox,
    map_box,
    normalize,
)


class TestLetterbox:
    def test_identity(self):
        img = np.zeros((640, 640), np.uint8)
        out, t = letterbox(img, 640)
        assert out.shape == (640, 640)
        assert t.scale == 1.0 and t.pad_x == 0 and t.pad_y == 0

    def test_wide_input(self):
        img = np.zeros((160, 320), np.uint8)  # h=160, w=320
        out, t = letterbox(img, 640)
        assert out.shape == (640, 640)
        assert t.scale == 2.0 and t.pad_x == 0 and t.pad_y == 160
        assert t.apply_point(10, 10) == (20.0, 180.0)

    def test_downscale(self):
        img = np.zeros((500, 1000), np.uint8)
        _, t = letterbox(img, 640)
        assert t.scale == pytest.approx(0.64)
        assert t.pad_y == 160 and t.pad_x == 0

    def test_fill_value(self):
        img = np.full((100, 200), 7, np.uint8)
        out, t = letterbox(img, 64, fill=114)
        assert (out[0] == 114).all()  # top padding row
        content = out[t.pad_y : t.pad_y + t.content_size[1]]
        assert (content == 7).all()

    def test_aspect_preserved(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            h, w = (int(v) for v in rng.integers(5, 900, size=2))
            _, t = letterbox(np.zeros((h, w), np.uint8), 640)
            assert abs(t.content_size[0] - t.scale * w) <= 1
            assert abs(t.content_size[1] - t.scale * h) <= 1

    def test_zero_sized_rejected(self):
        with pytest.raises(DataError):
            letterbox(np.zeros((0, 10), np.uint8), 64)

    def test_bad_dst_rejected(self):
        with pytest.raises(ConfigError):
            letterbox(np.zeros((10, 10), np.uint8), 0)


class TestMapBox:
    def test_identity_transform(self):
        t = LetterboxTransform.centered(640, 640, 640)
        box = BBox(10, 20, 100, 200)
        assert map_box(box, t, "forward") == box

    def test_forward_example(self):
        t = LetterboxTransform.centered(320, 160, 640)
        out = map_box(BBox(0, 0, 320, 160), t, "forward")
        assert out.as_tuple() == (0.0, 160.0, 640.0, 480.0)

    def test_inverse_example(self):
        t = LetterboxTransform.centered(320, 160, 640)
        out = map_box(BBox(0, 160, 640, 480), t, "inverse")
        assert out.as_tuple() == (0.0, 0.0, 320.0, 160.0)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            w, h = (int(v) for v in rng.integers(8, 1200, size=2))
            t = LetterboxTransform.centered(w, h, 640)
            x0, y0 = rng.uniform(0, w - 2), rng.uniform(0, h - 2)
            box = BBox(x0, y0, rng.uniform(x0 + 1, w), rng.uniform(y0 + 1, h))
            back = map_box(map_box(box, t, "forward"), t, "inverse")
            assert np.allclose(back.as_tuple(), box.as_tuple(), atol=1e-6)

    def test_box_inside_padding_rejected(self):
        t = LetterboxTransform.centered(320, 160, 640)  # pad_y = 160
        with pytest.raises(DataError, match="box outside image"):
            map_box(BBox(0, 0, 640, 150), t, "inverse")

    def test_bad_direction(self):
        t = LetterboxTransform.centered(10, 10, 20)
        with pytest.raises(ConfigError):
            map_box(BBox(0, 0, 5, 5), t, "sideways")


class TestNormalize:
    def test_unit_scale(self):
        spec = NormalizationSpec(mean=(0, 0, 0), std=(1, 1, 1), scale_to_unit=True)
        out = normalize(np.full((2, 2, 3), 255, np.uint8), spec)
        assert out.shape == (3, 2, 2)
        assert out.dtype == np.float32
        assert np.allclose(out, 1.0)

    def test_imagenet_style_constants(self):
        spec = NormalizationSpec(
            mean=(123.675, 116.28, 103.53), std=(58.395, 57.12, 57.375), scale_to_unit=False
        )
        img = np.zeros((1, 1, 3), np.uint8)
        img[0, 0] = (124, 116, 104)  # nearest integers to the channel means
        out = normalize(img, spec)
        assert abs(out[0, 0, 0] - (124 - 123.675) / 58.395) < 1e-6

    def test_gray_replicated(self):
        spec = NormalizationSpec(mean=(0, 0, 0), std=(1, 1, 1), scale_to_unit=False)
        out = normalize(np.arange(4, dtype=np.uint8).reshape(2, 2), spec)
        assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])

    def test_bad_channels(self):
        spec = NormalizationSpec(mean=(0, 0, 0), std=(1, 1, 1))
        with pytest.raises(DataError):
            normalize(np.zeros((2, 2, 4), np.uint8), spec)

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            NormalizationSpec(mean=(0, 0, 0), std=(1, 0, 1))
        with pytest.raises(ConfigError):
            NormalizationSpec(mean=(0, 0), std=(1, 1, 1))


class TestAugment:
    def test_no_ops_identity(self):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        mask = img > 5
        out_img, out_mask = augment(img, mask, set(), seed=0)
        assert np.array_equal(out_img, img) and np.array_equal(out_mask, mask)

    def test_involution(self):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        mask = img > 5
        # find a seed whose decision is "flip"
        seed = next(s for s in range(100) if not np.array_equal(augment(img, mask, {"hflip"}, s)[0], img))
        once_img, once_mask = augment(img, mask, {"hflip"}, seed)
        twice_img, twice_mask = augment(once_img, once_mask, {"hflip"}, seed)
        assert np.array_equal(twice_img, img) and np.array_equal(twice_mask, mask)

    def test_flip_index_arithmetic(self):
        mask = np.zeros((4, 9), bool)
        mask[2, 3] = True
        img = mask.astype(np.uint8)
        seed = next(s for s in range(100) if augment(img, mask, {"hflip"}, s)[1][2, 3] != mask[2, 3])
        _, flipped = augment(img, mask, {"hflip"}, seed)
        assert flipped[2, 9 - 1 - 3]

    def test_mismatch_rejected(self):
        with pytest.raises(DataError):
            augment(np.zeros((3, 4), np.uint8), np.zeros((4, 4), bool), {"hflip"}, 0)

    def test_unknown_op_rejected(self):
        with pytest.raises(ConfigError):
            augment(np.zeros((3, 4), np.uint8), np.zeros((3, 4), bool), {"vflip"}, 0)
