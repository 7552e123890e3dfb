import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from texsplat.imops import bilinear_sample, minmax_normalize, resize_bilinear, rotate_crop, to_luma


def test_bilinear_sample_hits_pixels_exactly():
    img = np.arange(12.0).reshape(3, 4)
    assert bilinear_sample(img, 2.0, 1.0) == img[1, 2]
    assert bilinear_sample(img, 2.5, 1.0) == pytest.approx(0.5 * (img[1, 2] + img[1, 3]))
    assert bilinear_sample(img, -5.0, 10.0) == img[2, 0]


def test_resize_identity():
    img = np.random.default_rng(0).uniform(size=(7, 9, 3))
    np.testing.assert_allclose(resize_bilinear(img, 7, 9), img)


@given(st.sampled_from([0.0, 90.0, 180.0, 270.0]))
def test_right_angle_rotation_is_exact(angle):
    img = np.random.default_rng(1).uniform(size=(9, 9))
    k = int(angle // 90)
    # counter-clockwise as displayed
    np.testing.assert_allclose(rotate_crop(img, angle), np.rot90(img, k), atol=1e-12)


def test_rotation_crop_size():
    out = rotate_crop(np.zeros((100, 80, 3)), 45.0)
    assert out.shape[0] == out.shape[1] == int(80 / np.sqrt(2))


def test_luma_weights():
    assert to_luma(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.299)
    assert to_luma(np.array([1.0, 1.0, 1.0])) == pytest.approx(1.0)


def test_minmax_constant_map_is_zero():
    np.testing.assert_array_equal(minmax_normalize(np.full((3, 3), 4.0)), 0.0)
    out = minmax_normalize(np.array([1.0, 3.0, 2.0]))
    np.testing.assert_allclose(out, [0.0, 1.0, 0.5])
