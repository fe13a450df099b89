import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semfuse.core import (
    ConfigError,
    ImagePair,
    LabelError,
    LabelPalette,
    PixelRangeError,
    ShapeMismatchError,
    TrainConfig,
    mfnet_palette,
    palette_for,
    rgb_to_luma,
    rgb_to_ycbcr,
    synthetic_palette,
    validate_pair,
    ycbcr_to_rgb,
)


def make_pair(h=64, w=64, vis_shape=None, label=None, label_shape=None):
    rng = np.random.default_rng(0)
    ir = rng.uniform(0, 1, (h, w)).astype(np.float32)
    vis = rng.uniform(0, 1, vis_shape or (h, w, 3)).astype(np.float32)
    if label is None and label_shape is not None:
        label = rng.integers(0, 4, label_shape)
    return ImagePair(id="t", ir=ir, vis_rgb=vis, label=label)


class TestValidatePair:
    def test_valid_pair_accepted(self):
        pair = make_pair(label_shape=(64, 64))
        assert validate_pair(pair, TrainConfig(scales=3)) is pair

    def test_idempotent_returns_identical_object(self):
        pair = make_pair()
        cfg = TrainConfig()
        once = validate_pair(pair, cfg)
        assert validate_pair(once, cfg) is pair

    def test_size_mismatch_rejected(self):
        pair = make_pair(64, 64, vis_shape=(32, 32, 3))
        with pytest.raises(ShapeMismatchError):
            validate_pair(pair, TrainConfig())

    def test_divisibility_rejected(self):
        pair = make_pair(30, 30)  # 30 not divisible by 4 at S=3
        with pytest.raises(ShapeMismatchError):
            validate_pair(pair, TrainConfig(scales=3))

    def test_pixel_range_rejected(self):
        pair = make_pair()
        pair.ir[0, 0] = 1.5
        with pytest.raises(PixelRangeError):
            validate_pair(pair, TrainConfig())

    def test_label_out_of_range_rejected(self):
        label = np.full((64, 64), 9, dtype=np.int64)
        pair = make_pair(label=label)
        with pytest.raises(LabelError):
            validate_pair(pair, TrainConfig(class_count=4))

    def test_label_shape_mismatch_rejected(self):
        pair = make_pair(label=np.zeros((32, 32), np.int64))
        with pytest.raises(ShapeMismatchError):
            validate_pair(pair, TrainConfig())


class TestLuma:
    def test_white_is_one(self):
        img = np.ones((4, 4, 3), np.float32)
        assert np.allclose(rgb_to_luma(img), 1.0)

    def test_black_is_zero(self):
        img = np.zeros((4, 4, 3), np.float32)
        assert np.allclose(rgb_to_luma(img), 0.0)

    def test_pure_red(self):
        img = np.zeros((2, 2, 3), np.float32)
        img[..., 0] = 1.0
        assert np.allclose(rgb_to_luma(img), 0.299, atol=1e-7)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_range(self, r, g, b):
        img = np.array([[[r, g, b]]], np.float32)
        y = rgb_to_luma(img)
        assert 0.0 <= y[0, 0] <= 1.0

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
           st.floats(0, 1), st.integers(0, 2))
    def test_monotone_per_channel(self, r, g, b, bump, channel):
        lo = np.array([[[r, g, b]]], np.float64)
        hi = lo.copy()
        hi[0, 0, channel] = min(1.0, lo[0, 0, channel] + bump)
        assert rgb_to_luma(hi)[0, 0] >= rgb_to_luma(lo)[0, 0] - 1e-7

    def test_pair_luma_matches_direct(self):
        pair = make_pair()
        assert np.array_equal(pair.vis_luma, rgb_to_luma(pair.vis_rgb))

    def test_ycbcr_round_trip(self):
        rng = np.random.default_rng(5)
        rgb = rng.uniform(0.1, 0.9, (8, 8, 3))
        back = ycbcr_to_rgb(rgb_to_ycbcr(rgb))
        assert np.allclose(back, rgb, atol=5e-3)


class TestPalette:
    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            LabelPalette(class_names=("a", "a"))

    def test_scored_classes_skip_background(self):
        assert synthetic_palette().scored_classes() == [1, 2, 3]

    def test_scored_classes_skip_ignore_index(self):
        pal = LabelPalette(class_names=("bg", "x", "y"), ignore_index=2)
        assert pal.scored_classes() == [1]

    def test_mfnet_names(self):
        assert mfnet_palette().class_names[1:3] == ("Car", "Person")
        assert mfnet_palette().class_count == 8

    def test_palette_for_counts(self):
        assert palette_for(4).class_count == 4
        assert palette_for(8).class_count == 8
        assert palette_for(6).class_count == 6


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.scales == 3 and cfg.lambda_reg == 1.0

    @pytest.mark.parametrize("kwargs", [
        {"scales": 5},
        {"scales": 1},
        {"lambda_reg": -0.1},
        {"batch_size": 0},
        {"class_mask": {9}},
        {"warm_start_epochs": 0},
        {"semantic_epochs": 0},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)

    def test_mask_becomes_frozenset(self):
        cfg = TrainConfig(class_mask={1, 2})
        assert isinstance(cfg.class_mask, frozenset)

    def test_with_overrides(self):
        cfg = TrainConfig().with_overrides(lambda_reg=0.0)
        assert cfg.lambda_reg == 0.0
