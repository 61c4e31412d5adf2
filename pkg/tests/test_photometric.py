import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smartpaste.photometric import (
    MIX_GRID,
    ColorParams,
    ColorRanges,
    ShadingRecord,
    brightness_adjust,
    color_transform,
    contrast_adjust,
    hue_adjust,
    make_mixing_mask,
    sample_color_params,
    sample_shading,
    saturation_adjust,
    shading_transform,
    upsample_control,
)
from smartpaste.tensor_core import ContractError, SeededRng, rgb_to_hsv

from conftest import smooth_image

images = arrays(np.float64, (12, 12, 3), elements=st.floats(0.0, 1.0))


def test_brightness_is_additive_and_unclamped():
    img = np.full((2, 2, 3), 0.8)
    assert np.allclose(brightness_adjust(img, 0.5), 1.3)


def test_contrast_preserves_channel_means():
    img = smooth_image(16, 16)
    out = contrast_adjust(img, (0.5, 1.0, 2.0))
    assert np.allclose(out.mean(axis=(0, 1)), img.mean(axis=(0, 1)))
    dev_in = img - img.mean(axis=(0, 1))
    assert np.allclose(out - out.mean(axis=(0, 1)), dev_in * [0.5, 1.0, 2.0])


def test_zero_contrast_gives_flat_image():
    img = smooth_image(8, 8)
    out = contrast_adjust(img, (0.0, 0.0, 0.0))
    assert np.allclose(out, img.mean(axis=(0, 1)))


def test_hue_third_turn_maps_primaries():
    px = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
    out = hue_adjust(px, 1 / 3)
    assert np.allclose(out, [[[0, 1, 0], [0, 0, 1]]], atol=1e-12)


def test_zero_saturation_is_gray_at_value():
    img = smooth_image(6, 6)
    out = saturation_adjust(img, 0.0)
    assert np.allclose(out, img.max(axis=-1, keepdims=True).repeat(3, axis=-1))


def test_saturation_clamps_at_one():
    img = smooth_image(6, 6)
    s = rgb_to_hsv(saturation_adjust(img, 50.0))[..., 1]
    assert s.max() <= 1.0 + 1e-12


def test_transform_order_brightness_before_hue():
    # brightness pushes values above 1; the hue step clamps them, so order matters
    img = np.full((1, 1, 3), [0.9, 0.2, 0.2])
    p = ColorParams(k1=1.0, delta1=0.0, lam=(1, 1, 1), delta2=0.3)
    assert np.allclose(color_transform(img, p), [[[1.0, 0.5, 0.5]]])


@settings(max_examples=50, deadline=None)
@given(images)
def test_identity_color_params_reproduce_input(img):
    assert np.abs(color_transform(img, ColorParams.identity()) - img).max() <= 1e-6


@settings(max_examples=30, deadline=None)
@given(images, st.floats(-1, 1), st.floats(0, 2), st.floats(-1, 1))
def test_shading_output_in_unit_range(img, d1, k1, d2):
    rng = SeededRng(0, "s")
    rec = sample_shading(rng, 12, 12)
    rec = ShadingRecord(ColorParams(k1, d1, (k1, 1.0, 0.5), d2), rec.params_b, rec.control, rec.mixing_mask)
    out = shading_transform(img, rec)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_sample_color_params_respects_ranges():
    rng = SeededRng(2, "c")
    ranges = ColorRanges()
    for _ in range(200):
        p = sample_color_params(rng, ranges)
        assert ranges.saturation[0] <= p.k1 < ranges.saturation[1]
        assert ranges.hue[0] <= p.delta1 < ranges.hue[1]
        assert all(ranges.contrast[0] <= v < ranges.contrast[1] for v in p.lam)
        assert ranges.brightness[0] <= p.delta2 < ranges.brightness[1]
    assert sample_color_params(rng, ColorRanges.identity()) == ColorParams.identity()


# --- mixing mask -------------------------------------------------------------------


def test_mixing_mask_shape_range_and_corners():
    mask, control = make_mixing_mask(SeededRng(4, "m"), 37, 53)
    assert mask.shape == (37, 53, 1) and control.shape == (MIX_GRID, MIX_GRID)
    assert mask.min() >= 0.0 and mask.max() <= 1.0
    assert set(np.unique(control)) <= {0.0, 1.0}
    # corner pixels sit exactly on the corner control points
    for (i, j), (ci, cj) in zip([(0, 0), (0, -1), (-1, 0), (-1, -1)], [(0, 0), (0, -1), (-1, 0), (-1, -1)]):
        assert mask[i, j, 0] == control[ci, cj]


def test_upsample_control_same_size_is_identity():
    c = SeededRng(1, "u").bernoulli(0.5, (10, 10))
    assert np.allclose(upsample_control(c, 10, 10)[..., 0], c)


def test_mixing_mask_needs_ten_pixels():
    with pytest.raises(ContractError):
        make_mixing_mask(SeededRng(0), 9, 20)


def test_constant_mixing_gives_single_transform():
    img = smooth_image(20, 20)
    rng = SeededRng(3, "s")
    a, b = sample_color_params(rng), sample_color_params(rng)
    ones, c1 = make_mixing_mask(None, 20, 20, control=np.ones((10, 10)))
    zeros, c0 = make_mixing_mask(None, 20, 20, control=np.zeros((10, 10)))
    want_a = np.clip(color_transform(img, a), 0, 1)
    want_b = np.clip(color_transform(img, b), 0, 1)
    assert np.abs(shading_transform(img, ShadingRecord(a, b, c1, ones)) - want_a).max() <= 1e-6
    assert np.abs(shading_transform(img, ShadingRecord(a, b, c0, zeros)) - want_b).max() <= 1e-6


def test_equal_params_make_mask_irrelevant():
    img = smooth_image(20, 20)
    rec = sample_shading(SeededRng(1, "s"), 20, 20)
    same = ShadingRecord(rec.params_a, rec.params_a, rec.control, rec.mixing_mask)
    assert np.allclose(shading_transform(img, same), np.clip(color_transform(img, rec.params_a), 0, 1))


def test_global_mode_uses_one_transform():
    rec = sample_shading(SeededRng(2, "s"), 16, 16, mode="global")
    assert rec.params_a == rec.params_b
    assert np.all(rec.control == 1) and np.all(rec.mixing_mask == 1)


def test_unknown_mode_rejected():
    with pytest.raises(ContractError):
        sample_shading(SeededRng(0), 16, 16, mode="radial")


def test_record_roundtrip_reproduces_output():
    img = smooth_image(24, 30)
    rec = sample_shading(SeededRng(9, "s"), 24, 30)
    d = json.loads(json.dumps(rec.to_dict()))
    assert len(d["control"]) == 10 and all(len(r) == 10 for r in d["control"])
    back = ShadingRecord.from_dict(d, 24, 30)
    assert np.array_equal(shading_transform(img, back), shading_transform(img, rec))


def test_shading_is_deterministic_per_stream():
    a = sample_shading(SeededRng(5, ("x", 1)), 16, 16)
    b = sample_shading(SeededRng(5, ("x", 1)), 16, 16)
    assert a.to_dict() == b.to_dict()
