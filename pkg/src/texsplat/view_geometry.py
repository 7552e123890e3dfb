"""Depth-aware correspondences between consecutive views.

Pixels of the current view are lifted with their rendered depth, moved into the
previous camera and projected.  This is the per-pixel form of the plane-induced
homography between the two views and coincides with it for planar scenes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .features import STRIDE
from .imops import bilinear_sample
from .scene import Camera

TAU_REL = 0.05


class Reprojection(NamedTuple):
    pixels: np.ndarray   # (..., 2) landing pixel in the previous view, NaN when absent
    depth: np.ndarray    # (...,) camera-frame z in the previous view
    valid: np.ndarray    # (...,) in front, in bounds, foreground


@dataclass
class ViewCorrespondence:
    prior_pixels: np.ndarray
    valid: np.ndarray
    occluded: np.ndarray
    beta: np.ndarray

    @property
    def usable(self):
        return self.valid & ~self.occluded


def cell_centers(grid_shape, stride=STRIDE):
    h, w = grid_shape
    ys = np.arange(h) * stride + (stride - 1) / 2.0
    xs = np.arange(w) * stride + (stride - 1) / 2.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return xx, yy


BG_TAP_WEIGHT = 1e-6  # ignore round-off weight on a neighbouring background pixel


def _background_taps(background, x, y):
    if background is None:
        return np.zeros(np.shape(x), dtype=bool)
    return bilinear_sample(np.asarray(background, dtype=np.float64), x, y) > BG_TAP_WEIGHT


def reproject(depth_v, cam_v: Camera, cam_prev: Camera, x, y, background=None) -> Reprojection:
    """Move current-view pixel coordinates (x, y) into the previous view."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    shape = x.shape
    d = bilinear_sample(depth_v, x, y)
    fg = np.isfinite(d) & (d > 0) & ~_background_taps(background, x, y)
    d_safe = np.where(fg, d, 1.0)
    world = cam_v.unproject_points(np.stack([x.ravel(), y.ravel()], axis=1), d_safe.ravel())
    pix, z, in_front = cam_prev.project_points(world)
    pix = pix.reshape(shape + (2,))
    z = z.reshape(shape)
    inb = (pix[..., 0] >= -0.5) & (pix[..., 0] < cam_prev.width - 0.5) \
        & (pix[..., 1] >= -0.5) & (pix[..., 1] < cam_prev.height - 0.5)
    valid = fg & in_front.reshape(shape) & inb
    pix = np.where(valid[..., None], pix, np.nan)
    return Reprojection(pix, z, valid)


def reproject_cells(depth_v, cam_v, cam_prev, grid_shape, background=None) -> Reprojection:
    xx, yy = cell_centers(grid_shape)
    return reproject(depth_v, cam_v, cam_prev, xx, yy, background)


def depth_range(depth, background=None):
    d = np.asarray(depth, dtype=np.float64)
    fg = np.isfinite(d)
    if background is not None:
        fg &= ~np.asarray(background, dtype=bool)
    if not fg.any():
        return 0.0
    return float(d[fg].max() - d[fg].min())


def occlusion_filter(reproj: Reprojection, depth_prev, tau_rel=TAU_REL, scene_range=None,
                     background_prev=None):
    """Flag correspondences whose depth disagrees with the previous view's depth map.

    Kept iff |z_prev - depth_prev(landing pixel)| <= tau_rel * scene depth range.
    """
    if scene_range is None:
        scene_range = depth_range(depth_prev, background_prev)
    depth_prev = np.asarray(depth_prev, dtype=np.float64)
    scene_range = max(scene_range, 1e-6 * max(1.0, float(np.nanmax(depth_prev))))
    px = np.nan_to_num(reproj.pixels[..., 0])
    py = np.nan_to_num(reproj.pixels[..., 1])
    sampled = bilinear_sample(depth_prev, px, py)
    with np.errstate(invalid="ignore"):
        far = np.abs(reproj.depth - sampled) > tau_rel * scene_range
    return reproj.valid & far


def _polar_angle(M):
    U, _, Vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(U @ Vt))
    d = np.where(d == 0, 1.0, d)
    D = np.zeros(M.shape[:-2] + (2, 2))
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = d
    R = U @ D @ Vt
    ang = np.degrees(np.arctan2(R[..., 1, 0], R[..., 0, 0])) % 360.0
    # tiny negative angles round up to exactly 360 under the modulo
    return np.where(ang >= 360.0, 0.0, ang)


def fit_linear_map(p_cur, p_prev):
    """Least-squares 2x2 M with M (p_cur - mean) ~ (p_prev - mean); None if degenerate."""
    p = np.asarray(p_cur, dtype=np.float64)
    q = np.asarray(p_prev, dtype=np.float64)
    if len(p) < 3:
        return None
    dp = p - p.mean(axis=0)
    dq = q - q.mean(axis=0)
    cpp = dp.T @ dp
    cqp = dq.T @ dp
    tr = np.trace(cpp)
    if tr <= 0 or np.linalg.det(cpp) <= 1e-9 * tr * tr:
        return None
    return cqp @ np.linalg.inv(cpp)


def estimate_local_rotation(p_cur, p_prev):
    """Rotation (degrees, [0, 360)) of the polar factor of the fitted 2x2 map, or None."""
    M = fit_linear_map(p_cur, p_prev)
    if M is None:
        return None
    return float(_polar_angle(M))


def _block_sum(a, stride, grid_shape):
    h, w = grid_shape
    H, W = a.shape[:2]
    pad = ((0, h * stride - H), (0, w * stride - W)) + ((0, 0),) * (a.ndim - 2)
    a = np.pad(a, pad)
    return a.reshape(h, stride, w, stride, *a.shape[2:]).sum(axis=(1, 3))


def _box3(a):
    p = np.pad(a, ((1, 1), (1, 1)) + ((0, 0),) * (a.ndim - 2))
    h, w = a.shape[:2]
    return sum(p[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3))


def local_rotation_grid(prior_pixels, usable, grid_shape, stride=STRIDE):
    """Per feature cell: rotation fitted over the usable pixels of its 3x3 cell neighbourhood."""
    H, W = usable.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    m = usable.astype(np.float64)
    px, py = xx * m, yy * m
    qx = np.where(usable, prior_pixels[..., 0], 0.0)
    qy = np.where(usable, prior_pixels[..., 1], 0.0)
    feats = np.stack([m, px, py, qx, qy, px * px, px * py, py * py,
                      qx * px, qx * py, qy * px, qy * py], axis=-1)
    s = _box3(_block_sum(feats, stride, grid_shape))
    n = s[..., 0]
    ns = np.maximum(n, 1.0)
    mpx, mpy, mqx, mqy = s[..., 1] / ns, s[..., 2] / ns, s[..., 3] / ns, s[..., 4] / ns
    cpp = np.empty(grid_shape + (2, 2))
    cpp[..., 0, 0] = s[..., 5] - n * mpx * mpx
    cpp[..., 0, 1] = cpp[..., 1, 0] = s[..., 6] - n * mpx * mpy
    cpp[..., 1, 1] = s[..., 7] - n * mpy * mpy
    cqp = np.empty(grid_shape + (2, 2))
    cqp[..., 0, 0] = s[..., 8] - n * mqx * mpx
    cqp[..., 0, 1] = s[..., 9] - n * mqx * mpy
    cqp[..., 1, 0] = s[..., 10] - n * mqy * mpx
    cqp[..., 1, 1] = s[..., 11] - n * mqy * mpy
    tr = cpp[..., 0, 0] + cpp[..., 1, 1]
    det = cpp[..., 0, 0] * cpp[..., 1, 1] - cpp[..., 0, 1] ** 2
    ok = (n >= 3) & (tr > 0) & (det > 1e-9 * tr * tr)
    cpp_safe = np.where(ok[..., None, None], cpp, np.eye(2))
    M = cqp @ np.linalg.inv(cpp_safe)
    beta = _polar_angle(np.where(ok[..., None, None], M, np.eye(2)))
    return np.where(ok, beta, np.nan)


def compute_correspondence(depth_v, cam_v, depth_prev, cam_prev, grid_shape, tau_rel=TAU_REL,
                           background_v=None, background_prev=None) -> ViewCorrespondence:
    H, W = np.shape(depth_v)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    rng = max(depth_range(depth_v, background_v), depth_range(depth_prev, background_prev))
    pix_reproj = reproject(depth_v, cam_v, cam_prev, xx, yy, background_v)
    pix_occ = occlusion_filter(pix_reproj, depth_prev, tau_rel, rng)
    beta = local_rotation_grid(pix_reproj.pixels, pix_reproj.valid & ~pix_occ, grid_shape)
    cells = reproject_cells(depth_v, cam_v, cam_prev, grid_shape, background_v)
    occ = occlusion_filter(cells, depth_prev, tau_rel, rng)
    return ViewCorrespondence(cells.pixels, cells.valid, occ, beta)


def angle_difference(a, b):
    """Wrapped absolute difference of two angles in degrees, in [0, 180]."""
    return np.abs((np.asarray(a, dtype=np.float64) - b + 180.0) % 360.0 - 180.0)
