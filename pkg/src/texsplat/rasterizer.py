"""Differentiable tile rasterizer for Gaussian scenes.

Forward: EWA projection of each 3D covariance to the image plane, per-tile
front-to-back alpha compositing of colour and of camera-frame mean depth.
Backward: hand-derived reverse pass, from pixel gradients through compositing
and projection down to the raw Gaussian parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._jit import resolve_backend
from .kernels import TILE
from .scene import Camera, GaussianScene, quat_to_rotmat, sigmoid

COV2D_BLUR = 0.3
NEAR_PLANE = 1e-2
RADIUS_SIGMAS = 3.0
BACKGROUND_ALPHA = 0.5
SENTINEL_FACTOR = 1.05

APPEARANCE = "appearance"
GEOMETRY = "geometry"
CHANNELS = (APPEARANCE, GEOMETRY)


@dataclass
class Projected:
    """Screen-space quantities per Gaussian, plus what the reverse pass needs."""

    visible: np.ndarray
    means2d: np.ndarray
    conics: np.ndarray
    radii: np.ndarray
    depths: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    t_cam: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    cov_cam: np.ndarray
    cov2d: np.ndarray
    jac: np.ndarray


@dataclass
class RenderOutput:
    image: np.ndarray
    depth: np.ndarray
    depth_raw: np.ndarray
    alpha: np.ndarray
    t_final: np.ndarray
    sentinel: float
    radii: np.ndarray
    visible: np.ndarray
    channel: str = APPEARANCE
    backend: str = "numpy"
    _ctx: dict = field(default_factory=dict, repr=False)

    @property
    def background_mask(self):
        return self.alpha < BACKGROUND_ALPHA

    @property
    def per_gaussian_stats(self):
        return {"radii": self.radii, "visible": self.visible}


@dataclass
class ParamGradients:
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    channel: str = APPEARANCE
    means2d: np.ndarray | None = None

    def as_dict(self):
        color_key = "colors" if self.channel == APPEARANCE else "colors_g"
        return {"means": self.means, "quats": self.quats, "log_scales": self.log_scales,
                "opacity_logits": self.opacity_logits, color_key: self.colors}

    def __iter__(self):
        return iter(self.as_dict().items())


def _channel_colors(scene, channel):
    if channel == APPEARANCE:
        return scene.colors
    if channel == GEOMETRY:
        return scene.colors_g
    raise ValueError(f"channel must be one of {CHANNELS}, got {channel!r}")


def preprocess(scene: GaussianScene, camera: Camera, channel=APPEARANCE) -> Projected:
    n = len(scene)
    colors = _channel_colors(scene, channel)
    Rc, tc = camera.R, camera.t
    t_cam = scene.means @ Rc.T + tc
    rot = quat_to_rotmat(scene.quats) if n else np.zeros((0, 3, 3))
    scales = np.exp(scene.log_scales)
    M = rot * scales[:, None, :]
    cov = M @ np.swapaxes(M, 1, 2)
    cov_cam = Rc[None] @ cov @ Rc.T[None]

    tz = t_cam[:, 2]
    in_front = tz > NEAR_PLANE
    z = np.where(in_front, tz, 1.0)
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * t_cam[:, 0] / (z * z)
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * t_cam[:, 1] / (z * z)
    cov2d = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2d[:, 0, 0] += COV2D_BLUR
    cov2d[:, 1, 1] += COV2D_BLUR
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    ok = in_front & (det > 0)
    det_safe = np.where(ok, det, 1.0)
    conics = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(0.1, mid * mid - det))
    radii = np.where(ok, np.ceil(RADIUS_SIGMAS * np.sqrt(np.maximum(lam, 0.0))), 0.0)
    means2d = np.stack([camera.fx * t_cam[:, 0] / z + camera.cx,
                        camera.fy * t_cam[:, 1] / z + camera.cy], axis=1)
    # off-screen Gaussians are dropped
    ok &= (means2d[:, 0] + radii >= 0) & (means2d[:, 0] - radii <= camera.width - 1)
    ok &= (means2d[:, 1] + radii >= 0) & (means2d[:, 1] - radii <= camera.height - 1)
    radii = np.where(ok, radii, 0.0)
    return Projected(ok, means2d, conics, radii, tz.copy(), sigmoid(scene.opacity_logits),
                     colors, t_cam, rot, scales, cov_cam, cov2d, jac)


def bin_tiles(proj: Projected, width, height):
    """Per-tile Gaussian lists, each sorted front to back by mean depth (ties by index)."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    vis = np.flatnonzero(proj.visible)
    vis = vis[np.lexsort((vis, proj.depths[vis]))]
    u, r = proj.means2d[vis], proj.radii[vis]
    x0 = np.clip(np.floor((u[:, 0] - r) / TILE), 0, ntx - 1).astype(np.int64)
    x1 = np.clip(np.floor((u[:, 0] + r) / TILE), 0, ntx - 1).astype(np.int64)
    y0 = np.clip(np.floor((u[:, 1] - r) / TILE), 0, nty - 1).astype(np.int64)
    y1 = np.clip(np.floor((u[:, 1] + r) / TILE), 0, nty - 1).astype(np.int64)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    counts = nx * ny
    gid = np.repeat(vis, counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = np.repeat(x0, counts) + local % np.repeat(nx, counts)
    ty = np.repeat(y0, counts) + local // np.repeat(nx, counts)
    tile = ty * ntx + tx
    order = np.argsort(tile, kind="stable")
    ids = gid[order].astype(np.int64)
    offsets = np.zeros(ntx * nty + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile, minlength=ntx * nty), out=offsets[1:])
    return offsets, ids


def render(scene: GaussianScene, camera: Camera, channel=APPEARANCE, backend=None) -> RenderOutput:
    backend = resolve_backend(backend)
    proj = preprocess(scene, camera, channel)
    W, H = int(camera.width), int(camera.height)
    offsets, ids = bin_tiles(proj, W, H)
    args = (offsets, ids, proj.means2d, proj.conics, proj.opacities,
            np.ascontiguousarray(proj.colors), proj.depths, scene.background, H, W)
    image, depth_raw, t_final, n_contrib = kernels.composite_forward(backend, *args)
    alpha = 1.0 - t_final
    front = proj.depths[proj.visible]
    sentinel = SENTINEL_FACTOR * float(front.max()) if len(front) else 1.0
    depth = np.where(alpha < BACKGROUND_ALPHA, sentinel, depth_raw)
    ctx = {"proj": proj, "args": args, "n_contrib": n_contrib, "t_final": t_final}
    return RenderOutput(image, depth, depth_raw, alpha, t_final, sentinel, proj.radii,
                        proj.visible, channel, backend, ctx)


def _quat_backward(quats, g_rot):
    """Gradient w.r.t. raw quaternions given dL/dR for R built from the normalized quaternion."""
    norm = np.linalg.norm(quats, axis=1, keepdims=True)
    q = quats / norm
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    G = g_rot
    gw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0] - x * G[:, 1, 2]
              - y * G[:, 2, 0] + x * G[:, 2, 1])
    gx = 2 * (y * G[:, 0, 1] + z * G[:, 0, 2] + y * G[:, 1, 0] - 2 * x * G[:, 1, 1]
              - w * G[:, 1, 2] + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2])
    gy = 2 * (-2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2] + x * G[:, 1, 0]
              + z * G[:, 1, 2] - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2])
    gz = 2 * (-2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2] + w * G[:, 1, 0]
              - 2 * z * G[:, 1, 1] + y * G[:, 1, 2] + x * G[:, 2, 0] + y * G[:, 2, 1])
    gq = np.stack([gw, gx, gy, gz], axis=1)
    return (gq - q * np.sum(q * gq, axis=1, keepdims=True)) / norm


def backward(scene: GaussianScene, camera: Camera, channel, grad_image, grad_depth=None,
             output: RenderOutput | None = None, backend=None) -> ParamGradients:
    """Gradients of L = sum(grad_image * image) + sum(grad_depth * depth_raw).

    ``output`` is the matching forward render; it is recomputed when omitted.
    """
    W, H = int(camera.width), int(camera.height)
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (H, W, 3):
        raise ValueError(f"grad_image shape {grad_image.shape} != {(H, W, 3)}")
    if grad_depth is None:
        grad_depth = np.zeros((H, W))
    grad_depth = np.asarray(grad_depth, dtype=np.float64)
    if grad_depth.shape != (H, W):
        raise ValueError(f"grad_depth shape {grad_depth.shape} != {(H, W)}")
    if output is None or output.channel != channel:
        output = render(scene, camera, channel, backend=backend)
    backend = output.backend if backend is None else resolve_backend(backend)
    ctx = output._ctx
    proj: Projected = ctx["proj"]
    n = len(scene)
    g2d, g_conic, g_opac, g_col, g_dep = kernels.composite_backward(
        backend, *ctx["args"], ctx["t_final"], ctx["n_contrib"],
        np.ascontiguousarray(grad_image), np.ascontiguousarray(grad_depth), n)

    vis = proj.visible
    Rc = camera.R
    t = proj.t_cam
    z = np.where(vis, t[:, 2], 1.0)
    fx, fy = camera.fx, camera.fy

    # conic -> 2D covariance
    a, b, c = proj.conics[:, 0], proj.conics[:, 1], proj.conics[:, 2]
    Q = np.stack([np.stack([a, b], 1), np.stack([b, c], 1)], 1)
    GQ = np.stack([np.stack([g_conic[:, 0], 0.5 * g_conic[:, 1]], 1),
                   np.stack([0.5 * g_conic[:, 1], g_conic[:, 2]], 1)], 1)
    G2 = -Q @ GQ @ Q
    J = proj.jac
    G_cov_cam = np.swapaxes(J, 1, 2) @ G2 @ J
    G_J = 2.0 * G2 @ J @ proj.cov_cam

    g_t = np.zeros((n, 3))
    g_t[:, 0] = g2d[:, 0] * fx / z + G_J[:, 0, 2] * (-fx / z ** 2)
    g_t[:, 1] = g2d[:, 1] * fy / z + G_J[:, 1, 2] * (-fy / z ** 2)
    g_t[:, 2] = (-g2d[:, 0] * fx * t[:, 0] / z ** 2 - g2d[:, 1] * fy * t[:, 1] / z ** 2
                 + G_J[:, 0, 0] * (-fx / z ** 2) + G_J[:, 1, 1] * (-fy / z ** 2)
                 + G_J[:, 0, 2] * (2 * fx * t[:, 0] / z ** 3)
                 + G_J[:, 1, 2] * (2 * fy * t[:, 1] / z ** 3) + g_dep)
    g_means = g_t @ Rc

    G_cov = Rc.T[None] @ G_cov_cam @ Rc[None]
    M = proj.rot * proj.scales[:, None, :]
    G_M = 2.0 * G_cov @ M
    g_scales = np.sum(G_M * proj.rot, axis=1)
    g_log_scales = g_scales * proj.scales
    G_R = G_M * proj.scales[:, None, :]
    g_quats = _quat_backward(scene.quats, G_R) if n else np.zeros((0, 4))

    sig = proj.opacities
    g_logits = g_opac * sig * (1.0 - sig)

    mask = (~vis)[:, None]
    return ParamGradients(
        means=np.where(mask, 0.0, g_means),
        quats=np.where(mask, 0.0, g_quats),
        log_scales=np.where(mask, 0.0, g_log_scales),
        opacity_logits=np.where(vis, g_logits, 0.0),
        colors=np.where(mask, 0.0, g_col),
        channel=channel,
        means2d=np.where(mask, 0.0, g2d),
    )


# ---------------------------------------------------------------------------
# adaptive density control


@dataclass
class DensifyStats:
    grad_accum: np.ndarray
    count: np.ndarray
    max_radius: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros(n))

    def update(self, grads: ParamGradients, output: RenderOutput):
        vis = output.visible
        self.grad_accum[vis] += np.linalg.norm(grads.means2d[vis], axis=1)
        self.count[vis] += 1
        self.max_radius = np.maximum(self.max_radius, output.radii)

    @property
    def mean_grad(self):
        return self.grad_accum / np.maximum(self.count, 1)

    def take(self, index, fresh):
        index = np.asarray(index)
        out = DensifyStats(self.grad_accum[index].copy(), self.count[index].copy(),
                           self.max_radius[index].copy())
        out.grad_accum[fresh] = 0.0
        out.count[fresh] = 0
        out.max_radius[fresh] = 0.0
        return out


SPLIT_SCALE_DIVISOR = 1.6


def plan_densify(scene: GaussianScene, stats: DensifyStats, grad_threshold, size_threshold,
                 opacity_floor, rng=None):
    """Clone, split and prune.

    Returns ``(new_scene, parent)`` where ``parent[i]`` is the index in ``scene`` that
    new Gaussian ``i`` came from, and a boolean mask of Gaussians created here.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    n = len(scene)
    hot = stats.mean_grad > grad_threshold
    extent = scene.scales.max(axis=1) if n else np.zeros(0)
    clone = hot & (extent < size_threshold)
    split = hot & (extent >= size_threshold)

    base = scene.copy()
    # a clone pair at one position should composite like the single original at its centre
    op = base.opacities[clone]
    base.opacity_logits[clone] = np.log1p(-np.sqrt(1.0 - op)) - np.log(np.sqrt(1.0 - op))

    keep = np.flatnonzero(~split)
    clone_idx = np.flatnonzero(clone)
    split_idx = np.flatnonzero(split)
    parent = np.concatenate([keep, clone_idx, split_idx, split_idx])
    fresh = np.concatenate([np.zeros(len(keep), bool), np.ones(len(clone_idx) + 2 * len(split_idx), bool)])
    out = base.take(parent)

    if len(split_idx):
        k = len(split_idx)
        sl = slice(len(keep) + len(clone_idx), None)
        scales = scene.scales[np.concatenate([split_idx, split_idx])]
        rot = quat_to_rotmat(scene.quats[np.concatenate([split_idx, split_idx])])
        offsets = rng.normal(size=(2 * k, 3)) * scales
        out.means[sl] = out.means[sl] + np.einsum("nij,nj->ni", rot, offsets)
        out.log_scales[sl] = np.log(scales / SPLIT_SCALE_DIVISOR)

    alive = out.opacities >= opacity_floor
    return out.take(np.flatnonzero(alive)), parent[alive], fresh[alive]


def densify_and_prune(scene, stats, grad_threshold, size_threshold, opacity_floor, rng=None):
    return plan_densify(scene, stats, grad_threshold, size_threshold, opacity_floor, rng)[0]
