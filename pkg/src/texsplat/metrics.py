"""Multi-view consistency (depth-warped RMSE) and content preservation (SSIM) reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imops import bilinear_sample
from .losses import ssim
from .rasterizer import APPEARANCE, render
from .view_geometry import BG_TAP_WEIGHT, TAU_REL, depth_range, reproject

SHORT_TERM = 1
LONG_TERM = 5


@dataclass
class ViewRenders:
    images: list
    depths: list
    backgrounds: list

    @classmethod
    def from_scene(cls, scene, cameras, channel=APPEARANCE):
        outs = [render(scene, cam, channel) for cam in cameras]
        return cls([o.image for o in outs], [o.depth for o in outs], [o.background_mask for o in outs])


def warp_residual(src_image, src_depth, src_bg, cam_src, dst_image, dst_depth, dst_bg, cam_dst,
                  tau_rel=TAU_REL):
    """RMSE between ``dst_image`` and ``src_image`` warped into the destination view.

    Destination pixels are lifted with their depth and looked up in the source view;
    only pixels visible in both (foreground, in bounds, depth-consistent) count.
    Returns (rmse, pixel count); rmse is NaN when nothing overlaps.
    """
    H, W = dst_depth.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    rep = reproject(dst_depth, cam_dst, cam_src, xx, yy, dst_bg)
    rng = max(depth_range(src_depth, src_bg), depth_range(dst_depth, dst_bg), 1e-6)
    px = np.nan_to_num(rep.pixels[..., 0])
    py = np.nan_to_num(rep.pixels[..., 1])
    sampled_depth = bilinear_sample(src_depth, px, py)
    src_fg = bilinear_sample(np.asarray(src_bg, dtype=np.float64), px, py) <= BG_TAP_WEIGHT
    ok = rep.valid & src_fg & (np.abs(rep.depth - sampled_depth) <= tau_rel * rng)
    n = int(ok.sum())
    if n == 0:
        return float("nan"), 0
    warped = bilinear_sample(src_image, px, py)
    diff = (warped - dst_image)[ok]
    return float(np.sqrt(np.mean(diff * diff))), n


def pair_list(n_views, gap):
    return [(v, v + gap) for v in range(n_views - gap)]


@dataclass
class ConsistencyReport:
    rows: list = field(default_factory=list)

    def select(self, metric):
        return [r for r in self.rows if r["metric"] == metric]

    def per_view_score(self, metric="st_rmse", n_views=None):
        """Mean pair RMSE over the pairs each view takes part in."""
        rows = self.select(metric)
        n = n_views or (max([r["view_b"] for r in rows], default=-1) + 1)
        acc = np.zeros(n)
        cnt = np.zeros(n)
        for r in rows:
            if np.isfinite(r["value"]):
                for v in (r["view_a"], r["view_b"]):
                    acc[v] += r["value"]
                    cnt[v] += 1
        return np.where(cnt > 0, acc / np.maximum(cnt, 1), np.nan)

    def to_csv(self):
        cols = ("metric", "view_a", "view_b", "value", "reference", "delta", "pixels")
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join("" if r.get(c) is None else
                                  repr(float(r[c])) if isinstance(r[c], float) else str(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


def consistency_rows(after: ViewRenders, cameras, before: ViewRenders | None = None, tau_rel=TAU_REL):
    rows = []
    n = len(cameras)
    for metric, gap in (("st_rmse", SHORT_TERM), ("lt_rmse", LONG_TERM)):
        for a, b in pair_list(n, gap):
            val, npx = warp_residual(after.images[a], after.depths[a], after.backgrounds[a], cameras[a],
                                     after.images[b], after.depths[b], after.backgrounds[b], cameras[b],
                                     tau_rel)
            ref = None
            if before is not None:
                ref, _ = warp_residual(before.images[a], before.depths[a], before.backgrounds[a],
                                       cameras[a], before.images[b], before.depths[b],
                                       before.backgrounds[b], cameras[b], tau_rel)
            rows.append({"metric": metric, "view_a": a, "view_b": b, "value": val, "reference": ref,
                         "delta": None if ref is None else val - ref, "pixels": npx})
    return rows


def evaluate(scene_before, scene_after, cameras, tau_rel=TAU_REL) -> ConsistencyReport:
    """Warped RMSE for adjacent and 5-apart view pairs, plus per-view SSIM before vs after."""
    before = ViewRenders.from_scene(scene_before, cameras)
    after = ViewRenders.from_scene(scene_after, cameras)
    return evaluate_renders(before, after, cameras, tau_rel)


def evaluate_renders(before: ViewRenders, after: ViewRenders, cameras, tau_rel=TAU_REL):
    report = ConsistencyReport()
    for v in range(len(cameras)):
        report.rows.append({"metric": "ssim", "view_a": v, "view_b": v,
                            "value": ssim(after.images[v], before.images[v]),
                            "reference": None, "delta": None, "pixels": after.images[v].shape[0] * after.images[v].shape[1]})
    if len(cameras) >= 2:
        report.rows.extend(consistency_rows(after, cameras, before, tau_rel))
    return report
