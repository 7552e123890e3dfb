"""Seeded synthetic scenes, camera arcs and procedural textures used as fixtures."""

from __future__ import annotations

import math

import numpy as np

from .scene import GaussianScene, look_at, pinhole

KINDS = ("planes", "sphere-cloud", "trex-toy")
TEXTURES = ("stripes", "checker", "rings", "dots", "noise")
BACKGROUND = (0.0, 0.0, 0.0)


def _quat_from_normal(normals):
    """Rotation taking the local z axis onto each normal, as (w, x, y, z)."""
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(np.broadcast_to(z, n.shape), n)
    s = np.linalg.norm(axis, axis=1)
    c = n @ z
    half = 0.5 * np.arctan2(s, c)
    safe = np.where(s[:, None] > 1e-12, axis / np.maximum(s, 1e-12)[:, None], np.array([1.0, 0, 0]))
    return np.concatenate([np.cos(half)[:, None], safe * np.sin(half)[:, None]], axis=1)


def _pattern(uv, kind, rng):
    u, v = uv[:, 0], uv[:, 1]
    if kind == 0:
        t = 0.5 + 0.5 * np.sign(np.sin(2 * np.pi * 3 * u) * np.sin(2 * np.pi * 3 * v))
        base = np.array([0.85, 0.35, 0.2]) * t[:, None] + np.array([0.2, 0.45, 0.8]) * (1 - t[:, None])
    else:
        t = 0.5 + 0.5 * np.sin(2 * np.pi * 4 * (u + 0.5 * v))
        base = np.array([0.9, 0.85, 0.3]) * t[:, None] + np.array([0.25, 0.6, 0.3]) * (1 - t[:, None])
    return np.clip(base + rng.normal(scale=0.02, size=base.shape), 0.0, 1.0)


def _plane(n, center, size, rng, kind):
    side = max(1, int(math.ceil(math.sqrt(n))))
    g = (np.arange(side) + 0.5) / side
    uu, vv = np.meshgrid(g, g, indexing="xy")
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)[:n]
    uv = np.clip(uv + rng.uniform(-0.15, 0.15, size=uv.shape) / side, 0.0, 1.0)
    means = np.column_stack([center[0] + (uv[:, 0] - 0.5) * size, center[1] + (uv[:, 1] - 0.5) * size,
                             np.full(len(uv), center[2])])
    spacing = size / side
    scales = np.column_stack([np.full(len(uv), 0.7 * spacing), np.full(len(uv), 0.7 * spacing),
                              np.full(len(uv), 0.05 * spacing)])
    quats = np.tile([1.0, 0.0, 0.0, 0.0], (len(uv), 1))
    return means, quats, scales, _pattern(uv, kind, rng)


def make_planes(n_gaussians, seed=0):
    """A large back plane and a smaller plane in front of it (two depth bands)."""
    rng = np.random.default_rng(seed)
    n_back = max(1, int(round(n_gaussians * 0.65)))
    n_front = n_gaussians - n_back
    parts = [_plane(n_back, (0.0, 0.0, 1.0), 3.0, rng, 0)]
    if n_front:
        parts.append(_plane(n_front, (0.3, 0.2, -0.5), 1.4, rng, 1))
    means, quats, scales, colors = (np.concatenate(p) for p in zip(*parts))
    opac = np.full(len(means), 0.95)
    return GaussianScene.from_activated(means, quats, scales, opac, colors, background=BACKGROUND,
                                        name="planes")


def make_sphere_cloud(n_gaussians, seed=0):
    rng = np.random.default_rng(seed)
    i = np.arange(n_gaussians) + 0.5
    phi = np.arccos(1 - 2 * i / n_gaussians)
    theta = np.pi * (1 + 5 ** 0.5) * i
    normals = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    radius = 1.0
    means = normals * radius
    spacing = radius * math.sqrt(4 * math.pi / n_gaussians)
    scales = np.column_stack([np.full(n_gaussians, 0.6 * spacing), np.full(n_gaussians, 0.6 * spacing),
                              np.full(n_gaussians, 0.05 * spacing)])
    uv = np.column_stack([(theta / (2 * np.pi)) % 1.0, phi / np.pi])
    colors = _pattern(uv, 0, rng)
    opac = np.full(n_gaussians, 0.9)
    return GaussianScene.from_activated(means, _quat_from_normal(normals), scales, opac, colors,
                                        background=BACKGROUND, name="sphere-cloud")


def make_trex_toy(n_gaussians, seed=0):
    """A toy creature of ellipsoid blobs (body, head, tail, legs) standing on a ground plane."""
    rng = np.random.default_rng(seed)
    blobs = [  # centre, radii, weight
        ((0.0, 0.0, 0.0), (0.7, 0.4, 0.4), 0.35),
        ((0.8, -0.45, 0.0), (0.3, 0.22, 0.22), 0.12),
        ((-0.9, 0.1, 0.0), (0.55, 0.12, 0.12), 0.12),
        ((0.25, 0.55, 0.15), (0.1, 0.3, 0.1), 0.06),
        ((-0.25, 0.55, -0.15), (0.1, 0.3, 0.1), 0.06),
    ]
    n_ground = max(1, int(round(0.29 * n_gaussians)))
    n_body = n_gaussians - n_ground
    weights = np.array([b[2] for b in blobs])
    counts = np.floor(weights / weights.sum() * n_body).astype(int)
    counts[0] += n_body - counts.sum()
    means, normals, scl = [], [], []
    for (c, r, _), m in zip(blobs, counts):
        if m <= 0:
            continue
        d = rng.normal(size=(m, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        means.append(np.asarray(c) + d * r)
        nrm = d / np.asarray(r)
        normals.append(nrm / np.linalg.norm(nrm, axis=1, keepdims=True))
        area = 4 * math.pi * (np.prod(r) ** (2 / 3))
        s = math.sqrt(area / m)
        scl.append(np.tile([0.6 * s, 0.6 * s, 0.05 * s], (m, 1)))
    means = np.concatenate(means)
    normals = np.concatenate(normals)
    scales = np.concatenate(scl)
    quats = _quat_from_normal(normals)
    uv = np.column_stack([(means[:, 0] + 1.5) / 3.0, (means[:, 1] + 1.0) / 2.0])
    colors = _pattern(uv, 1, rng)
    g_means, g_quats, g_scales, g_colors = _plane(n_ground, (0.0, 0.0, 0.0), 3.5, rng, 0)
    # ground lies in the x-z plane under the feet
    g_means = np.column_stack([g_means[:, 0], np.full(len(g_means), 0.85), g_means[:, 1]])
    g_quats = _quat_from_normal(np.tile([0.0, 1.0, 0.0], (len(g_means), 1)))
    all_means = np.concatenate([means, g_means])
    opac = np.full(len(all_means), 0.9)
    return GaussianScene.from_activated(
        all_means, np.concatenate([quats, g_quats]), np.concatenate([scales, g_scales]), opac,
        np.concatenate([colors, g_colors * 0.6]), background=BACKGROUND, name="trex-toy")


def make_scene(kind, n_gaussians, seed=0):
    if n_gaussians < 1:
        raise ValueError("n_gaussians must be >= 1")
    builders = {"planes": make_planes, "sphere-cloud": make_sphere_cloud, "trex-toy": make_trex_toy}
    if kind not in builders:
        raise ValueError(f"unknown scene kind {kind!r}; choose from {KINDS}")
    return builders[kind](n_gaussians, seed)


def camera_arc(n_cameras, width=64, height=64, radius=4.0, arc_deg=40.0, fov_deg=50.0,
               target=(0.0, 0.0, 0.0), elevation=0.0):
    """Cameras on a horizontal arc around ``target``, all looking at it, ordered left to right."""
    if n_cameras < 1:
        raise ValueError("n_cameras must be >= 1")
    target = np.asarray(target, dtype=np.float64)
    if n_cameras == 1:
        angles = np.zeros(1)
    else:
        angles = np.radians(np.linspace(-arc_deg / 2, arc_deg / 2, n_cameras))
    cams = []
    for a in angles:
        eye = target + radius * np.array([math.sin(a), -math.sin(math.radians(elevation)),
                                          -math.cos(a) * math.cos(math.radians(elevation))])
        cams.append(pinhole(width, height, fov_deg, look_at(eye, target)))
    return cams


def default_cameras(kind, n_cameras, width=64, height=64):
    if kind == "trex-toy":
        return camera_arc(n_cameras, width, height, radius=4.5, arc_deg=60.0, elevation=15.0)
    if kind == "sphere-cloud":
        return camera_arc(n_cameras, width, height, radius=3.5, arc_deg=60.0)
    return camera_arc(n_cameras, width, height, radius=4.0, arc_deg=30.0)


def make_texture(kind="stripes", size=128, seed=0):
    """Procedural RGB texture in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    a = np.array([0.95, 0.8, 0.25])
    b = np.array([0.15, 0.2, 0.55])
    if kind == "stripes":
        t = 0.5 + 0.5 * np.sin(2 * np.pi * 8 * (xx + 0.3 * yy))
    elif kind == "checker":
        t = ((np.floor(xx * 8) + np.floor(yy * 8)) % 2).astype(np.float64)
    elif kind == "rings":
        r = np.hypot(xx - 0.5, yy - 0.5)
        t = 0.5 + 0.5 * np.cos(2 * np.pi * 10 * r)
    elif kind == "dots":
        t = (np.hypot((xx * 8) % 1 - 0.5, (yy * 8) % 1 - 0.5) < 0.3).astype(np.float64)
    elif kind == "noise":
        from scipy.ndimage import gaussian_filter
        t = gaussian_filter(rng.normal(size=(size, size)), 2.0, mode="wrap")
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    else:
        raise ValueError(f"unknown texture {kind!r}; choose from {TEXTURES}")
    return t[..., None] * a + (1 - t[..., None]) * b


def add_floaters(scene: GaussianScene, cameras, fraction=0.05, offset=0.1, seed=0, direction="camera"):
    """Displace a fraction of the Gaussians off the surface by ``offset`` x scene extent.

    ``direction`` is "camera" (towards the mean camera centre) or "random" (a random
    unit vector).  Returns the perturbed scene and the indices that moved.
    """
    rng = np.random.default_rng(seed)
    n = len(scene)
    m = max(1, int(round(fraction * n)))
    idx = np.sort(rng.choice(n, size=m, replace=False))
    lo, hi = scene.means.min(axis=0), scene.means.max(axis=0)
    extent = float(np.linalg.norm(hi - lo))
    if direction == "camera":
        d = np.mean([c.center for c in cameras], axis=0) - scene.means[idx]
    elif direction == "random":
        d = rng.normal(size=(m, 3))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out = scene.copy()
    out.means[idx] += d * offset * extent
    return out, idx


def build_fixture(kind, n_gaussians, n_cameras, width=64, height=64, seed=0):
    scene = make_scene(kind, n_gaussians, seed)
    return scene, default_cameras(kind, n_cameras, width, height)

