import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from texsplat.scene import look_at, pinhole
from texsplat.view_geometry import (Reprojection, angle_difference, cell_centers, compute_correspondence,
                                    estimate_local_rotation, local_rotation_grid, occlusion_filter,
                                    reproject, reproject_cells)


def rot(deg):
    t = math.radians(deg)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def plane_depth(cam, z):
    return np.full((cam.height, cam.width), float(z))


def test_identity_pair_maps_cells_to_their_centres():
    cam = pinhole(32, 32)
    rep = reproject_cells(plane_depth(cam, 5.0), cam, cam, (8, 8))
    xx, yy = cell_centers((8, 8))
    np.testing.assert_allclose(rep.pixels[..., 0], xx, atol=1e-9)
    np.testing.assert_allclose(rep.pixels[..., 1], yy, atol=1e-9)
    assert rep.valid.all()


def test_translation_parallax():
    cam0 = pinhole(40, 40)
    t, Z = 0.3, 6.0
    cam1 = pinhole(40, 40, world_to_cam=look_at((t, 0, 0), (t, 0, 1)))
    rep = reproject(plane_depth(cam0, Z), cam0, cam1, np.array([20.0]), np.array([20.0]))
    # the point sits t to the left of the moved camera
    assert rep.pixels[0, 0] == pytest.approx(20.0 - cam0.fx * t / Z)
    assert rep.pixels[0, 1] == pytest.approx(20.0)


def test_background_cells_are_absent():
    cam = pinhole(16, 16)
    bg = np.zeros((16, 16), bool)
    bg[:8] = True
    rep = reproject_cells(plane_depth(cam, 3.0), cam, cam, (4, 4), background=bg)
    assert not rep.valid[:2].any() and rep.valid[2:].all()
    assert np.isnan(rep.pixels[:2]).all()


def test_out_of_bounds_is_absent():
    cam0 = pinhole(32, 32)
    cam1 = pinhole(32, 32, world_to_cam=look_at((3.0, 0, 0), (3.0, 0, 1)))
    rep = reproject_cells(plane_depth(cam0, 4.0), cam0, cam1, (8, 8))
    assert not rep.valid.all() and rep.valid.any()


def test_occlusion_by_nearer_surface():
    cam0 = pinhole(32, 32)
    cam1 = pinhole(32, 32, world_to_cam=look_at((0.5, 0, 0), (0.5, 0, 1)))
    # the prior view sees a near plane everywhere, the current view a far plane
    rep = reproject_cells(plane_depth(cam0, 8.0), cam0, cam1, (8, 8))
    occ = occlusion_filter(rep, plane_depth(cam1, 2.0), 0.05, scene_range=6.0)
    assert occ[rep.valid].all()
    assert not occlusion_filter(rep, plane_depth(cam1, 2.0), np.inf, scene_range=6.0).any()
    same = occlusion_filter(reproject_cells(plane_depth(cam0, 8.0), cam0, cam0, (8, 8)),
                            plane_depth(cam0, 8.0), 0.05, scene_range=6.0)
    assert not same.any()


def test_rotation_examples():
    p = np.random.default_rng(0).normal(size=(10, 2))
    assert estimate_local_rotation(p, p) == pytest.approx(0.0, abs=1e-9)
    assert estimate_local_rotation(p, p @ rot(90).T) == pytest.approx(90.0, abs=1e-6)
    assert estimate_local_rotation(p, 2 * p @ rot(30).T) == pytest.approx(30.0, abs=1e-6)


def test_degenerate_sets_have_no_rotation():
    assert estimate_local_rotation(np.zeros((2, 2)), np.zeros((2, 2))) is None
    line = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    assert estimate_local_rotation(line, line) is None


@given(beta=st.floats(0, 359.9), phi=st.floats(0, 359.9), s=st.floats(0.2, 5), seed=st.integers(0, 999))
def test_rotation_properties(beta, phi, s, seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(12, 2)) * 10
    q = s * p @ rot(beta).T + rng.normal(size=2)
    b0 = estimate_local_rotation(p, q)
    assert angle_difference(b0, beta) < 1e-6
    # rotating both sets by phi leaves the relative rotation unchanged, rotating one adds phi
    assert angle_difference(estimate_local_rotation(p @ rot(phi).T, q @ rot(phi).T), b0) < 1e-5
    assert angle_difference(estimate_local_rotation(p, q @ rot(phi).T), b0 + phi) < 1e-5
    assert 0 <= b0 < 360


def test_reflection_is_never_returned():
    p = np.random.default_rng(1).normal(size=(8, 2))
    q = p * np.array([-1.0, 1.0])
    b = estimate_local_rotation(p, q)
    assert b is not None and 0 <= b < 360


def test_rotation_grid_on_rotated_field():
    H = W = 32
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    c = 15.5
    R = rot(25.0)
    px = c + R[0, 0] * (xx - c) + R[0, 1] * (yy - c)
    py = c + R[1, 0] * (xx - c) + R[1, 1] * (yy - c)
    beta = local_rotation_grid(np.stack([px, py], -1), np.ones((H, W), bool), (8, 8))
    assert np.all(angle_difference(beta, 25.0) < 1e-6)


def test_rotation_grid_marks_empty_cells_absent():
    usable = np.zeros((16, 16), bool)
    usable[:4, :4] = True
    yy, xx = np.mgrid[0:16, 0:16].astype(float)
    beta = local_rotation_grid(np.stack([xx, yy], -1), usable, (4, 4))
    assert np.isfinite(beta[:2, :2]).all()
    assert np.isnan(beta[3, 3])


def test_identity_correspondence_has_zero_beta():
    cam = pinhole(32, 32)
    d = plane_depth(cam, 4.0)
    corr = compute_correspondence(d, cam, d, cam, (8, 8))
    assert corr.usable.all()
    assert np.all(angle_difference(corr.beta, 0.0) < 1e-6)


def test_camera_roll_gives_matching_beta():
    cam0 = pinhole(48, 48)
    roll = 20.0
    R = np.eye(4)
    R[:2, :2] = rot(roll)
    cam1 = pinhole(48, 48, world_to_cam=R)
    d = plane_depth(cam0, 4.0)
    corr = compute_correspondence(d, cam0, d, cam1, (12, 12))
    b = corr.beta[corr.usable & np.isfinite(corr.beta)]
    assert len(b) > 20
    assert np.all(angle_difference(b, roll) < 1e-6)


def test_angle_difference_wraps():
    assert angle_difference(350.0, 10.0) == pytest.approx(20.0)
    assert angle_difference(0.0, 180.0) == pytest.approx(180.0)
    assert angle_difference(-90.0, 270.0) == pytest.approx(0.0)
