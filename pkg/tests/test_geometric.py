import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smartpaste.geometric import (
    DegenerateGeometryError,
    Homography,
    geometric_transform,
    image_corners,
    project,
    sample_jitter,
    solve_homography,
    warp_image,
    warp_points,
)
from smartpaste.tensor_core import ContractError, SeededRng

from conftest import smooth_image

MILD = np.array([[1.02, 0.03, 4.0], [-0.02, 0.97, -3.0], [1e-4, -5e-5, 1.0]])


def test_homography_normalizes_and_is_read_only():
    h = Homography(2 * MILD)
    assert h.h[2, 2] == 1.0 and np.allclose(h.h, MILD)
    with pytest.raises(ValueError):
        h.h[0, 0] = 5.0


def test_homography_list_roundtrip():
    h = Homography(MILD)
    back = Homography.from_list(h.to_list())
    assert np.array_equal(back.h, h.h) and len(h.to_list()) == 9


def test_singular_homography_rejected():
    with pytest.raises(DegenerateGeometryError):
        Homography(np.array([[1, 2, 3], [2, 4, 6], [0, 0, 1.0]]))
    with pytest.raises(DegenerateGeometryError):
        Homography(np.array([[1, 0, 0], [0, 1, 0], [0, 0, 0.0]]))


def test_corners_are_pixel_centres():
    assert image_corners(4, 6).tolist() == [[0, 0], [5, 0], [5, 3], [0, 3]]


def test_equal_points_give_exact_identity():
    c = image_corners(32, 32)
    assert np.array_equal(solve_homography(c, c).h, np.eye(3))


def test_recovers_known_homography_from_four_points():
    c = image_corners(100, 140)
    dst = project(Homography(MILD), c)
    assert np.allclose(solve_homography(c, dst).h, MILD, atol=1e-10)


def test_overdetermined_consistent_fit_is_exact():
    pts = SeededRng(0, "pts").uniform(0, 200, (12, 2))
    dst = project(Homography(MILD), pts)
    h = solve_homography(pts, dst)
    assert np.abs(project(h, pts) - dst).max() < 1e-9


def test_least_squares_beats_perturbed_solution():
    pts = SeededRng(1, "pts").uniform(0, 200, (20, 2))
    dst = project(Homography(MILD), pts) + SeededRng(1, "noise").normal((20, 2)) * 0.5
    h = solve_homography(pts, dst)
    # residual is near the noise level, far below a grossly wrong model
    res = np.abs(project(h, pts) - dst).max()
    assert res < 3.0
    assert res < np.abs(project(Homography.identity(), pts) - dst).max()


def test_collinear_points_rejected():
    src = np.array([[0, 0], [1, 1], [2, 2], [3, 3.0]])
    with pytest.raises(DegenerateGeometryError):
        solve_homography(src, src + 0.5)


def test_needs_four_points():
    with pytest.raises(ContractError):
        solve_homography(np.zeros((3, 2)), np.ones((3, 2)))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 2), elements=st.floats(-20, 20)))
def test_corner_reprojection(offsets):
    c = image_corners(256, 256)
    h = solve_homography(c, c + offsets)
    assert np.abs(project(h, c) - (c + offsets)).max() <= 1e-6
    assert np.allclose(project(h.inverse(), project(h, c)), c, atol=1e-6)


def test_identity_warp_is_exact():
    img = smooth_image(17, 23)
    assert np.array_equal(warp_image(img, Homography.identity()), img)


def test_integer_translation_shifts_pixels():
    img = smooth_image(20, 30)
    t = Homography(np.array([[1, 0, 3.0], [0, 1, 2.0], [0, 0, 1]]))
    out = warp_image(img, t)
    assert np.allclose(out[2:, 3:], img[:-2, :-3], atol=1e-12)
    # clamp-to-edge outside the source
    assert np.allclose(out[0, 3:], img[0, :-3], atol=1e-12)


def test_half_pixel_translation_averages_neighbours():
    img = smooth_image(8, 8)
    t = Homography(np.array([[1, 0, 0.5], [0, 1, 0.0], [0, 0, 1]]))
    out = warp_image(img, t)
    assert np.allclose(out[:, 1:], 0.5 * (img[:, :-1] + img[:, 1:]), atol=1e-12)


def test_warp_points_agrees_with_full_warp():
    img = smooth_image(24, 24)
    h = Homography(MILD)
    full = warp_image(img, h)
    pts = np.stack(np.meshgrid(np.arange(24.0), np.arange(24.0)), axis=-1)
    assert np.array_equal(warp_points(img, h, pts), full)


def test_blocked_warp_matches_pointwise_warp():
    # 300 rows of 300 span two row blocks
    img = smooth_image(300, 300)
    h = Homography(MILD)
    pts = np.stack(np.meshgrid(np.arange(300.0), np.arange(300.0)), axis=-1)
    assert np.array_equal(warp_image(img, h), warp_points(img, h, pts))


def test_warp_keeps_dtype_and_channels():
    img = smooth_image(16, 16)[..., :1].astype(np.float32)
    out = warp_image(img, Homography(MILD))
    assert out.dtype == np.float32 and out.shape == (16, 16, 1)


def test_jitter_bounded_by_sigma():
    rng = SeededRng(0, "j")
    for _ in range(100):
        off = sample_jitter(rng, 15.0).offsets
        assert off.shape == (4, 2) and np.abs(off).max() <= 15.0
    with pytest.raises(ContractError):
        sample_jitter(rng, -1.0)


def test_zero_sigma_transform_is_identity():
    img = smooth_image(32, 32)
    out, h = geometric_transform(img, 0.0, SeededRng(0, "g"))
    assert np.array_equal(h.h, np.eye(3)) and np.array_equal(out, img)


def test_transform_maps_corners_to_jittered_corners():
    img = smooth_image(64, 64)
    rng = SeededRng(7, "g")
    _, h = geometric_transform(img, 10.0, rng)
    off = sample_jitter(SeededRng(7, "g"), 10.0).offsets
    c = image_corners(64, 64)
    assert np.abs(project(h, c) - (c + off)).max() <= 1e-6


def test_warp_through_horizon_is_rejected():
    # the line x = 10 is sent to infinity
    h = Homography(np.array([[1, 0, 0], [0, 1, 0], [-0.1, 0, 1.0]]))
    with pytest.raises(DegenerateGeometryError):
        warp_image(smooth_image(16, 16), h.inverse())
    with pytest.raises(DegenerateGeometryError):
        warp_points(smooth_image(16, 16), h.inverse(), np.array([[10.0, 3.0]]))
    # a point set straddling the line but missing it is fine
    assert warp_points(smooth_image(16, 16), h.inverse(), np.array([[9.0, 3.0], [11.0, 3.0]])).shape == (2, 3)
