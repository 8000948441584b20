import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fairskin.colorspace import LabImage, lab_pixel, lab_to_srgb, srgb_to_lab, validate_rgb


def lab_oracle(r, g, b):
    """Scalar re-derivation of the forward conversion with the math module."""

    def lin(c):
        c = c / 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    x = (0.4124 * rl + 0.3576 * gl + 0.1805 * bl) * 100 / 95.047
    y = (0.2126 * rl + 0.7152 * gl + 0.0722 * bl) * 100 / 100.0
    z = (0.0193 * rl + 0.1192 * gl + 0.9505 * bl) * 100 / 108.883

    def f(t):
        return t ** (1 / 3) if t > 0.008856 else 7.787 * t + 16 / 116

    return 116 * f(y) - 16, 500 * (f(x) - f(y)), 200 * (f(y) - f(z))


def px(r, g, b):
    return np.array([[[r, g, b]]], dtype=np.uint8)


def test_white_maps_to_l100():
    lab = srgb_to_lab(px(255, 255, 255))
    assert lab.L[0, 0] == pytest.approx(100.0, abs=0.05)
    assert abs(lab.a[0, 0]) <= 0.05 and abs(lab.b[0, 0]) <= 0.05


def test_black_is_exact_zero():
    lab = srgb_to_lab(px(0, 0, 0))
    assert (lab.L[0, 0], lab.a[0, 0], lab.b[0, 0]) == (0.0, 0.0, 0.0)


def test_red_matches_scalar_oracle():
    expect = lab_oracle(255, 0, 0)
    lab = srgb_to_lab(px(255, 0, 0))
    got = (lab.L[0, 0], lab.a[0, 0], lab.b[0, 0])
    assert got == pytest.approx(expect, abs=1e-9)
    assert got == pytest.approx((53.24, 80.09, 67.20), abs=0.15)


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_forward_matches_oracle(r, g, b):
    lab = srgb_to_lab(px(r, g, b))
    assert (lab.L[0, 0], lab.a[0, 0], lab.b[0, 0]) == pytest.approx(lab_oracle(r, g, b), abs=1e-9)


def test_inverse_of_white_and_black():
    assert lab_to_srgb(lab_pixel(100, 0, 0))[0, 0].tolist() == [255, 255, 255]
    assert lab_to_srgb(lab_pixel(0, 0, 0))[0, 0].tolist() == [0, 0, 0]


def test_round_trip_grid():
    v = np.linspace(0, 255, 18).round().astype(np.uint8)
    grid = np.stack(np.meshgrid(v, v, v, indexing="ij"), axis=-1).reshape(18 * 18, 18, 3)
    back = lab_to_srgb(srgb_to_lab(grid))
    assert np.abs(back.astype(int) - grid.astype(int)).max() <= 1


@given(st.integers(0, 255))
def test_gray_axis_is_neutral(v):
    lab = srgb_to_lab(px(v, v, v))
    assert abs(lab.a[0, 0]) <= 0.05 and abs(lab.b[0, 0]) <= 0.05


def test_lightness_increases_along_gray_axis():
    v = np.arange(256, dtype=np.uint8)
    L = srgb_to_lab(np.stack([v, v, v], axis=-1)[None]).L[0]
    assert np.all(np.diff(L) > 0)


def test_out_of_gamut_is_clamped_and_counted():
    img = LabImage(np.array([[50.0, 50.0]]), np.array([[0.0, 200.0]]), np.array([[0.0, -200.0]]))
    rgb, n = lab_to_srgb(img, return_clamped=True)
    assert rgb.dtype == np.uint8
    assert n == 1


def test_pixel_locality():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (4, 5, 3), dtype=np.uint8)
    whole = srgb_to_lab(img)
    one = srgb_to_lab(img[2:3, 3:4])
    assert whole.L[2, 3] == one.L[0, 0] and whole.b[2, 3] == one.b[0, 0]


def test_validate_rgb_rejects_bad_shape():
    with pytest.raises(ValueError):
        validate_rgb(np.zeros((4, 4), dtype=np.uint8))


def test_lab_planes_must_agree():
    with pytest.raises(ValueError):
        LabImage(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))
