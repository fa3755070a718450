import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynvo.errors import InvalidArgument
from dynvo.imaging import (
    Frame,
    downsample,
    fill_depth_holes,
    gradient,
    load_frame,
    pyramid,
    rgb_to_gray,
    sample_bilinear,
    sample_bilinear_grad,
    write_depth_png,
    write_gray_png,
)
from dynvo.imaging import _fill_rows

depths = arrays(
    float, st.tuples(st.integers(3, 12), st.integers(3, 12)),
    elements=st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.25, 3.0]),
)


# --- frames and files ----------------------------------------------------------


def test_frame_validation():
    with pytest.raises(InvalidArgument):
        Frame(0.0, np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(InvalidArgument):
        Frame(0.0, np.full((2, 2), 1.5), np.zeros((2, 2)))
    with pytest.raises(InvalidArgument):
        Frame(0.0, np.zeros((2, 2)), -np.ones((2, 2)))
    with pytest.raises(InvalidArgument):
        Frame(np.inf, np.zeros((2, 2)), np.zeros((2, 2)))


def test_luma_weights():
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 255]]], dtype=np.uint8)
    assert np.allclose(rgb_to_gray(rgb), [[0.299, 0.587, 0.114, 1.0]])


def test_png_roundtrip(tmp_path, rng):
    depth = np.round(rng.uniform(0.5, 4.0, (6, 7)) * 5000) / 5000
    depth[0, 0] = 0.0
    gray = np.round(rng.uniform(0, 1, (6, 7)) * 255) / 255
    write_depth_png(tmp_path / "d.png", depth)
    write_gray_png(tmp_path / "g.png", gray)
    f = load_frame(tmp_path / "g.png", tmp_path / "d.png", 1.5)
    assert np.allclose(f.depth, depth, atol=1e-12)
    assert np.allclose(f.intensity, gray, atol=1e-12)
    assert f.timestamp == 1.5


# --- hole filling ------------------------------------------------------------


def test_fill_takes_right_neighbor():
    assert np.array_equal(_fill_rows(np.array([[2.0, 0, 0, 3.0]])), [[2.0, 3.0, 3.0, 3.0]])


def test_fill_trailing_zeros_take_left_neighbor():
    assert np.array_equal(_fill_rows(np.array([[0, 2.0, 0, 0]])), [[2.0, 2.0, 2.0, 2.0]])


def test_fill_hole_free_image_unchanged_before_closing(rng):
    d = rng.uniform(1, 2, (5, 6))
    assert np.array_equal(_fill_rows(d), d)


def test_fill_all_zero_image_unchanged():
    assert np.array_equal(fill_depth_holes(np.zeros((4, 5))), np.zeros((4, 5)))


def test_fill_random_holes_leaves_only_empty_rows(rng):
    d = rng.uniform(1, 3, (60, 80))
    d[rng.random(d.shape) < 0.05] = 0.0
    d[10] = 0.0
    out = fill_depth_holes(d)
    zero_rows = np.flatnonzero(np.any(out == 0, axis=1))
    assert list(zero_rows) == [10]
    assert np.all(out[10] == 0)


def test_fill_closing_does_not_touch_constant_image():
    d = np.full((6, 6), 2.0)
    d[2, 3] = 0.0
    assert np.array_equal(fill_depth_holes(d), np.full((6, 6), 2.0))


@given(depths)
@settings(max_examples=150, deadline=None)
def test_fill_is_idempotent(d):
    once = fill_depth_holes(d)
    assert np.array_equal(fill_depth_holes(once), once)


@given(depths)
@settings(max_examples=150, deadline=None)
def test_fill_leaves_zeros_only_in_empty_rows(d):
    out = fill_depth_holes(d)
    empty = ~np.any(d > 0, axis=1)
    assert np.all(out[~empty] > 0)
    assert np.all(out[empty] == 0)


# --- sampling ------------------------------------------------------------------


def test_sample_at_lattice_points_is_exact(rng):
    img = rng.random((5, 7))
    for v in range(5):
        for u in range(7):
            val, ok = sample_bilinear(img, float(u), float(v))
            assert ok and val == img[v, u]


def test_sample_midpoint():
    val, ok = sample_bilinear(np.array([[0.0, 4.0], [0.0, 4.0]]), 0.5, 0.0)
    assert ok and val == 2.0


def test_sample_block_center():
    val, _ = sample_bilinear(np.array([[1.0, 2.0], [3.0, 4.0]]), 0.5, 0.5)
    assert val == 2.5


def test_sample_outside_is_invalid():
    img = np.ones((3, 3))
    assert not sample_bilinear(img, -0.1, 1.0)[1]
    assert not sample_bilinear(img, 1.0, 2.01)[1]
    assert sample_bilinear(img, 2.0, 2.0)[1]


def test_sample_depth_with_zero_neighbor_is_invalid():
    d = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert not sample_bilinear(d, 0.2, 0.2, depth=True)[1]
    assert sample_bilinear(d, 0.2, 0.2)[1]


@given(
    arrays(float, (4, 4), elements=st.floats(0, 1)),
    st.floats(0, 3), st.floats(0, 3),
)
@settings(max_examples=200, deadline=None)
def test_sample_bounded_by_neighbors(img, u, v):
    val, ok = sample_bilinear(img, u, v)
    u0, v0 = min(int(u), 2), min(int(v), 2)
    cell = img[v0 : v0 + 2, u0 : u0 + 2]
    assert ok and cell.min() - 1e-12 <= val <= cell.max() + 1e-12


def test_sample_derivative_matches_finite_difference(rng):
    img = rng.random((6, 6))
    u, v = rng.uniform(0.2, 4.8, 50), rng.uniform(0.2, 4.8, 50)
    # stay off cell boundaries where the interpolant has a kink
    u = np.floor(u) + np.clip(u % 1, 0.1, 0.9)
    v = np.floor(v) + np.clip(v % 1, 0.1, 0.9)
    _, _, du, dv = sample_bilinear_grad(img, u, v)
    h = 1e-6
    fdu = (sample_bilinear(img, u + h, v)[0] - sample_bilinear(img, u - h, v)[0]) / (2 * h)
    fdv = (sample_bilinear(img, u, v + h)[0] - sample_bilinear(img, u, v - h)[0]) / (2 * h)
    assert np.allclose(du, fdu, atol=1e-8) and np.allclose(dv, fdv, atol=1e-8)


# --- gradient ------------------------------------------------------------------


def test_gradient_constant():
    gx, gy = gradient(np.full((5, 5), 0.3))
    assert not gx.any() and not gy.any()


def test_gradient_ramp():
    img = 0.01 * np.arange(8)[None, :].repeat(6, axis=0)
    gx, gy = gradient(img)
    assert np.allclose(gx, 0.01, atol=1e-15) and not gy.any()


def test_gradient_central_and_one_sided():
    img = np.array([[0.0, 1.0, 4.0, 9.0]] * 3)
    gx, _ = gradient(img)
    assert list(gx[1]) == [1.0, 2.0, 4.0, 5.0]


def test_gradient_taylor_remainder():
    x = np.arange(64)
    img = 0.5 + 0.4 * np.sin(0.05 * x)[None, :] * np.cos(0.03 * x)[:, None]
    gx, gy = gradient(img)
    # I(u + 1) ~ I(u) + gx, the central difference being exact to second order
    pred = img[:, 10:50] + gx[:, 10:50]
    assert np.max(np.abs(pred - img[:, 11:51])) < 0.05**2


def test_gradient_needs_3x3():
    with pytest.raises(InvalidArgument):
        gradient(np.zeros((2, 5)))


# --- pyramids ------------------------------------------------------------------


def test_downsample_constant():
    f = downsample(Frame(0.0, np.full((4, 6), 0.25), np.full((4, 6), 2.0)))
    assert f.shape == (2, 3)
    assert np.all(f.intensity == 0.25) and np.all(f.depth == 2.0)


def test_downsample_depth_uses_valid_members_only():
    d = np.array([[2.0, 2.0], [0.0, 0.0]])
    assert downsample(Frame(0.0, np.zeros((2, 2)), d)).depth[0, 0] == 2.0
    assert downsample(Frame(0.0, np.zeros((2, 2)), np.zeros((2, 2)))).depth[0, 0] == 0.0


def test_downsample_drops_odd_row_and_keeps_timestamp():
    f = downsample(Frame(3.25, np.zeros((5, 7)), np.ones((5, 7))))
    assert f.shape == (2, 3) and f.timestamp == 3.25


def test_pyramid_dimensions():
    levels = pyramid(Frame(0.0, np.zeros((480, 640)), np.ones((480, 640))), 3)
    assert [f.shape for f in levels] == [(480, 640), (240, 320), (120, 160)]


@given(arrays(float, (6, 8), elements=st.floats(0, 1)))
@settings(max_examples=100, deadline=None)
def test_downsample_preserves_mean(img):
    f = downsample(Frame(0.0, img, np.ones_like(img)))
    assert abs(f.intensity.mean() - img.mean()) <= 1e-12
