import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from texsplat.scene import (Camera, GaussianScene, SceneParseError, SceneValidationError, load_cameras,
                            load_scene, look_at, pinhole, project, quat_to_rotmat, save_cameras,
                            save_scene, scene_from_dict, scene_to_dict, unproject)

from conftest import random_scene

finite = st.floats(-50, 50, allow_nan=False)


def test_identity_camera_projects_unit_z_point_to_principal_point():
    cam = Camera(100.0, 100.0, 0.0, 0.0, 64, 64)
    p = project(cam, (0.0, 0.0, 1.0))
    assert p.in_front and p.depth == 1.0
    np.testing.assert_allclose(p.pixel, (0.0, 0.0))


def test_point_behind_camera_is_flagged():
    p = project(pinhole(32, 32), (0.0, 0.0, -1.0))
    assert not p.in_front
    assert np.isnan(p.pixel).all()


def test_unproject_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        unproject(pinhole(32, 32), (3.0, 4.0), 0.0)


@given(x=st.floats(0, 63), y=st.floats(0, 47), d=st.floats(0.1, 100),
       eye=st.tuples(finite, finite, finite))
def test_unproject_project_round_trip(x, y, d, eye):
    eye = np.array(eye) + np.array([0, 0, -60.0])
    cam = pinhole(64, 48, 60, look_at(eye, (0.3, -0.2, 0.5)))
    world = unproject(cam, (x, y), d)
    p = project(cam, world)
    np.testing.assert_allclose(p.pixel, (x, y), atol=1e-7 * max(1.0, d))
    assert p.depth == pytest.approx(d, rel=1e-9)


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 1e-3))
def test_quaternion_rotation_is_proper(q):
    R = quat_to_rotmat(np.array([q]))[0]
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_scene_round_trip_is_exact(tmp_path, rng):
    scene = random_scene(rng, 7)
    save_scene(scene, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    for k, v in scene.params().items():
        np.testing.assert_array_equal(getattr(back, k), v)
    np.testing.assert_array_equal(back.background, scene.background)
    save_scene(back, tmp_path / "t.json")
    assert (tmp_path / "s.json").read_bytes() == (tmp_path / "t.json").read_bytes()


def test_empty_scene_round_trip(tmp_path):
    save_scene(GaussianScene.empty(), tmp_path / "e.json")
    assert len(load_scene(tmp_path / "e.json")) == 0


def test_nan_record_names_offending_gaussian(rng):
    doc = scene_to_dict(random_scene(rng, 5))
    doc["gaussians"][3][1] = float("nan")
    with pytest.raises(SceneValidationError, match="Gaussian 3"):
        scene_from_dict(doc)


def test_short_record_names_its_index(rng):
    doc = scene_to_dict(random_scene(rng, 4))
    doc["gaussians"][2] = doc["gaussians"][2][:5]
    with pytest.raises(SceneParseError, match="record 2"):
        scene_from_dict(doc)


def test_malformed_json_is_a_parse_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SceneParseError):
        load_scene(p)


def test_activated_properties(rng):
    scene = random_scene(rng, 6)
    assert np.all((scene.opacities > 0) & (scene.opacities < 1))
    np.testing.assert_allclose(scene.scales, np.exp(scene.log_scales))
    assert scene[2].opacity == pytest.approx(scene.opacities[2])


def test_camera_round_trip_and_validation(tmp_path):
    cams = [pinhole(40, 30, 45, look_at((1.0, 0.5, -3.0), (0, 0, 0)))]
    save_cameras(cams, tmp_path / "c.json")
    back = load_cameras(tmp_path / "c.json")
    np.testing.assert_array_equal(back[0].world_to_cam, cams[0].world_to_cam)
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["cameras"][0]["fx"] = -1
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(SceneValidationError, match="camera 0"):
        load_cameras(tmp_path / "c.json")


def test_take_and_copy_are_independent(rng):
    scene = random_scene(rng, 5)
    sub = scene.take([4, 0])
    sub.means[0] += 1.0
    assert not np.allclose(scene.means[4], sub.means[0])
    np.testing.assert_array_equal(scene.copy().colors, scene.colors)
