"""Gaussian scenes, pinhole cameras and their JSON documents.

A scene is stored structure-of-arrays: every parameter class is one numpy
array indexed by Gaussian.  Scales are kept as raw log values and opacities
as raw logits; the activated values are exposed as properties.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

SCENE_FORMAT = "texsplat-scene"
CAMERA_FORMAT = "texsplat-cameras"
RECORD_FIELDS = (
    "mu_x", "mu_y", "mu_z",
    "rot_w", "rot_x", "rot_y", "rot_z",
    "log_scale_x", "log_scale_y", "log_scale_z",
    "opacity_logit",
    "color_r", "color_g", "color_b",
    "geom_color_r", "geom_color_g", "geom_color_b",
)
PARAM_NAMES = ("means", "quats", "log_scales", "opacity_logits", "colors", "colors_g")


class SceneError(ValueError):
    pass


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class Gaussian:
    """One Gaussian record with raw (pre-activation) scale and opacity."""

    mu: np.ndarray
    rot: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color: np.ndarray
    color_g: np.ndarray

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def opacity(self):
        return float(sigmoid(self.opacity_logit))


@dataclass
class GaussianScene:
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    colors_g: np.ndarray
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "scene"
    unit_scale: float = 1.0

    def __post_init__(self):
        n = len(self.means)
        self.means = np.asarray(self.means, dtype=np.float64).reshape(n, 3)
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.colors_g = np.asarray(self.colors_g, dtype=np.float64).reshape(n, 3)
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)

    @classmethod
    def empty(cls, background=(0.0, 0.0, 0.0), name="scene"):
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, 3)), np.zeros((0, 3)), np.asarray(background, float), name)

    @classmethod
    def from_activated(cls, means, quats, scales, opacities, colors, colors_g=None,
                       background=(0.0, 0.0, 0.0), name="scene"):
        colors = np.asarray(colors, dtype=np.float64)
        return cls(
            means=means,
            quats=quats,
            log_scales=np.log(np.asarray(scales, dtype=np.float64)),
            opacity_logits=logit(opacities),
            colors=colors,
            colors_g=colors.copy() if colors_g is None else colors_g,
            background=np.asarray(background, dtype=np.float64),
            name=name,
        )

    @classmethod
    def from_gaussians(cls, gaussians, background=(0.0, 0.0, 0.0), name="scene"):
        if not gaussians:
            return cls.empty(background, name)
        return cls(
            np.stack([g.mu for g in gaussians]),
            np.stack([g.rot for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.color for g in gaussians]),
            np.stack([g.color_g for g in gaussians]),
            np.asarray(background, float),
            name,
        )

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i) -> Gaussian:
        return Gaussian(self.means[i].copy(), self.quats[i].copy(), self.log_scales[i].copy(),
                        float(self.opacity_logits[i]), self.colors[i].copy(), self.colors_g[i].copy())

    @property
    def gaussians(self):
        return [self[i] for i in range(len(self))]

    @property
    def scales(self):
        return np.exp(self.log_scales)

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return GaussianScene(**{k: v.copy() for k, v in self.params().items()},
                             background=self.background.copy(), name=self.name,
                             unit_scale=self.unit_scale)

    def take(self, index):
        index = np.asarray(index, dtype=np.int64)
        return GaussianScene(**{k: v[index].copy() for k, v in self.params().items()},
                             background=self.background.copy(), name=self.name,
                             unit_scale=self.unit_scale)

    def normalize_quats(self):
        norms = np.linalg.norm(self.quats, axis=1, keepdims=True)
        self.quats /= np.maximum(norms, 1e-12)

    def validate(self):
        for name, arr in self.params().items():
            bad = ~np.isfinite(arr.reshape(len(self), -1)).all(axis=1) if len(self) else []
            idx = np.flatnonzero(bad)
            if len(idx):
                raise SceneValidationError(
                    f"non-finite {name} for Gaussian {int(idx[0])}")
        if not np.isfinite(self.background).all():
            raise SceneValidationError("non-finite background")
        if len(self):
            zero = np.flatnonzero(np.linalg.norm(self.quats, axis=1) < 1e-12)
            if len(zero):
                raise SceneValidationError(f"zero quaternion for Gaussian {int(zero[0])}")
        return self


def quat_to_rotmat(q):
    """Rotation matrices for quaternions (w, x, y, z), normalized first. Shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


# ---------------------------------------------------------------------------
# cameras


class Projection(NamedTuple):
    pixel: np.ndarray
    depth: float
    in_front: bool


@dataclass
class Camera:
    """Pinhole camera, OpenCV axes (x right, y down, z forward).

    Pixel coordinates put the centre of pixel (row r, column c) at (x=c, y=r).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.world_to_cam = np.asarray(self.world_to_cam, dtype=np.float64).reshape(4, 4)

    @property
    def R(self):
        return self.world_to_cam[:3, :3]

    @property
    def t(self):
        return self.world_to_cam[:3, 3]

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def center(self):
        return -self.R.T @ self.t

    def validate(self):
        if not (self.fx > 0 and self.fy > 0):
            raise SceneValidationError("focal lengths must be positive")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise SceneValidationError("image size must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise SceneValidationError("principal point outside the image")
        if not np.isfinite(self.world_to_cam).all():
            raise SceneValidationError("non-finite extrinsics")
        R = self.R
        if np.abs(R @ R.T - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise SceneValidationError("extrinsic rotation is not a proper rotation")
        if not np.allclose(self.world_to_cam[3], [0, 0, 0, 1]):
            raise SceneValidationError("extrinsics bottom row must be (0, 0, 0, 1)")
        return self

    def to_camera_frame(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.t

    def project_points(self, points):
        """Vectorized projection: returns (pixels (N, 2), depths (N,), in_front (N,))."""
        pc = self.to_camera_frame(np.atleast_2d(points))
        z = pc[:, 2]
        in_front = z > 0
        zs = np.where(in_front, z, 1.0)
        pix = np.stack([self.fx * pc[:, 0] / zs + self.cx, self.fy * pc[:, 1] / zs + self.cy], axis=1)
        pix[~in_front] = np.nan
        return pix, z, in_front

    def unproject_points(self, pixels, depths):
        pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        depths = np.asarray(depths, dtype=np.float64).reshape(-1)
        pc = np.stack([(pixels[:, 0] - self.cx) / self.fx * depths,
                       (pixels[:, 1] - self.cy) / self.fy * depths,
                       depths], axis=1)
        return (pc - self.t) @ self.R

    def with_size(self, width, height):
        """Same camera resampled to another resolution (intrinsics scaled)."""
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5,
                      (self.cy + 0.5) * sy - 0.5, int(width), int(height), self.world_to_cam.copy())


def project(camera: Camera, point) -> Projection:
    """Project one world point. Points with camera z <= 0 come back flagged, pixel NaN."""
    pix, z, ok = camera.project_points(np.asarray(point, dtype=np.float64).reshape(1, 3))
    return Projection(pix[0], float(z[0]), bool(ok[0]))


def unproject(camera: Camera, pixel, depth: float) -> np.ndarray:
    if not depth > 0:
        raise ValueError(f"depth must be positive, got {depth}")
    return camera.unproject_points(np.asarray(pixel, dtype=np.float64).reshape(1, 2), [depth])[0]


def look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """World-to-camera matrix for a camera at ``eye`` looking at ``target`` (OpenCV axes)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    m = np.eye(4)
    m[:3, :3] = R
    m[:3, 3] = -R @ eye
    return m


def pinhole(width, height, fov_deg=50.0, world_to_cam=None):
    f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
    return Camera(f, f, (width - 1) / 2, (height - 1) / 2, int(width), int(height),
                  np.eye(4) if world_to_cam is None else world_to_cam)


# ---------------------------------------------------------------------------
# documents


def scene_to_dict(scene: GaussianScene):
    records = np.concatenate(
        [scene.means, scene.quats, scene.log_scales, scene.opacity_logits[:, None],
         scene.colors, scene.colors_g], axis=1) if len(scene) else np.zeros((0, len(RECORD_FIELDS)))
    return {
        "format": SCENE_FORMAT,
        "version": 1,
        "name": scene.name,
        "unit_scale": float(scene.unit_scale),
        "sh_degree": 0,
        "background": [float(v) for v in scene.background],
        "fields": list(RECORD_FIELDS),
        "gaussians": [[float(v) for v in row] for row in records],
    }


def scene_from_dict(doc) -> GaussianScene:
    if not isinstance(doc, dict) or "gaussians" not in doc:
        raise SceneParseError("scene document needs a 'gaussians' array")
    fields = doc.get("fields", list(RECORD_FIELDS))
    if list(fields) != list(RECORD_FIELDS):
        raise SceneParseError("unsupported record layout in 'fields'")
    n_fields = len(RECORD_FIELDS)
    rows = []
    for i, rec in enumerate(doc["gaussians"]):
        if not isinstance(rec, list) or len(rec) != n_fields:
            raise SceneParseError(f"Gaussian record {i}: expected {n_fields} numbers")
        try:
            rows.append([float(v) for v in rec])
        except (TypeError, ValueError) as exc:
            raise SceneParseError(f"Gaussian record {i}: {exc}") from None
    try:
        background = np.array([float(v) for v in doc.get("background", (0.0, 0.0, 0.0))])
    except (TypeError, ValueError) as exc:
        raise SceneParseError(f"background: {exc}") from None
    if background.shape != (3,):
        raise SceneParseError("background must have three components")
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), n_fields)
    scene = GaussianScene(arr[:, 0:3], arr[:, 3:7], arr[:, 7:10], arr[:, 10], arr[:, 11:14],
                          arr[:, 14:17], background, str(doc.get("name", "scene")),
                          float(doc.get("unit_scale", 1.0)))
    return scene.validate()


def save_scene(scene: GaussianScene, path):
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1) + "\n", encoding="utf-8")


def load_scene(path) -> GaussianScene:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"{path}: {exc}") from None
    return scene_from_dict(doc)


def camera_to_dict(cam: Camera):
    return {
        "fx": float(cam.fx), "fy": float(cam.fy), "cx": float(cam.cx), "cy": float(cam.cy),
        "width": int(cam.width), "height": int(cam.height),
        "world_to_cam": [float(v) for v in cam.world_to_cam.reshape(-1)],
    }


def camera_from_dict(d) -> Camera:
    try:
        m = np.array([float(v) for v in d["world_to_cam"]])
        if m.size != 16:
            raise ValueError("world_to_cam needs 16 numbers")
        return Camera(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                      int(d["width"]), int(d["height"]), m.reshape(4, 4))
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneParseError(f"camera record: {exc}") from None


def save_cameras(cameras, path):
    doc = {"format": CAMERA_FORMAT, "version": 1, "cameras": [camera_to_dict(c) for c in cameras]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_cameras(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"{path}: {exc}") from None
    cams = []
    for i, rec in enumerate(doc.get("cameras", [])):
        try:
            cams.append(camera_from_dict(rec).validate())
        except SceneError as exc:
            raise type(exc)(f"camera {i}: {exc}") from None
    return cams
