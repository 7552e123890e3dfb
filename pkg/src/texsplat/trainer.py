"""Texture transfer: color pre-step, per-view texture optimization, geometry branch, densification."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import control_maps as cm
from .features import FeatureExtractor
from .losses import content_loss_and_grad, rec_loss_and_grad, tv_loss_and_grad
from .optim import Adam
from .rasterizer import APPEARANCE, GEOMETRY, DensifyStats, backward, plan_densify, render
from .scene import GaussianScene
from .texture_bank import TextureBank, build_bank, build_depth_groups
from .texture_loss import PriorMap, TargetState, build_target_map, propagate_prior, weighted_gt2_loss_and_grad
from .view_geometry import TAU_REL, ViewCorrespondence, compute_correspondence

log = logging.getLogger(__name__)

COLOR_EPS = 1e-6
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 50


class DivergenceError(RuntimeError):
    pass


@dataclass
class TransferConfig:
    lambda_wgt: float = 2.0
    lambda_c: float = 0.005
    lambda_tv: float = 0.02
    lambda_p: float = 0.5
    K: int = 4
    angle_step: float = 22.5
    lambda_d: float = 0.8
    lambda_f: float = 0.8
    lambda_phi: float = 0.25
    steps: int = 1000
    gpb_period: int = 2
    rec_ssim_weight: float = 0.2
    pseudo_prior_angle: Optional[float] = None
    tau_rel: float = TAU_REL
    lr_position: float = 1.6e-4
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-2
    densify_interval: int = 100
    densify_from: int = 100
    densify_until: int = 500
    densify_grad_threshold: float = 2e-4
    densify_size_threshold: float = 0.01
    prune_opacity: float = 0.005
    max_per_cell: Optional[int] = 64
    color_transfer: bool = True
    no_afcm: bool = False
    no_gpb: bool = False
    no_prior: bool = False
    gpb_only: bool = False
    seed: int = 0
    extractor_seed: int = 0

    def validate(self):
        for name in ("lambda_wgt", "lambda_c", "lambda_tv", "lambda_p", "lambda_d", "lambda_f",
                     "lambda_phi", "rec_ssim_weight", "tau_rel"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.steps <= 0:
            raise ValueError("steps must be > 0")
        if self.gpb_period < 1:
            raise ValueError("gpb_period must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.angle_step <= 360:
            raise ValueError("angle_step must be in (0, 360]")
        if self.rec_ssim_weight > 1:
            raise ValueError("rec_ssim_weight must be <= 1")
        return self

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)


def _field_types():
    hints = {"float": float, "int": int, "bool": bool, "Optional[float]": float, "Optional[int]": int}
    return {f.name: (hints[f.type], f.type.startswith("Optional")) for f in dataclasses.fields(TransferConfig)}


def parse_value(name, text):
    types = _field_types()
    if name not in types:
        raise KeyError(f"unknown config key {name!r}")
    typ, optional = types[name]
    text = str(text).strip()
    if optional and text.lower() in ("", "none"):
        return None
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {text!r}")
    return typ(text)


def config_to_text(cfg: TransferConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {'none' if v is None else repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def config_from_text(text, base: TransferConfig | None = None) -> TransferConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, val)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return dataclasses.replace(base or TransferConfig(), **values).validate()


def load_config(path) -> TransferConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_text(fh.read())


def save_config(cfg: TransferConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))


# ---------------------------------------------------------------------------
# color pre-step


def _sym_sqrt(C):
    w, V = np.linalg.eigh(C)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def color_statistics(pixels):
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    mu = px.mean(axis=0)
    cov = np.cov(px, rowvar=False, bias=True) if len(px) > 1 else np.zeros((3, 3))
    return mu, cov + COLOR_EPS * np.eye(3)


def affine_color_map(src_pixels, dst_pixels):
    """A, b with A = C_dst^1/2 C_src^-1/2, so A x + b has the mean and covariance of dst."""
    mu_s, C_s = color_statistics(src_pixels)
    mu_t, C_t = color_statistics(dst_pixels)
    A = _sym_sqrt(C_t) @ np.linalg.inv(_sym_sqrt(C_s))
    return A, mu_t - A @ mu_s


def color_transfer(scene: GaussianScene, texture_image, cameras, clip=True):
    """Match rendered foreground colour statistics to the texture's with one affine map.

    The map is applied to the appearance colours of every Gaussian (not the geometry
    branch colours), so all views change consistently.
    """
    fg = []
    for cam in cameras:
        out = render(scene, cam, APPEARANCE)
        fg.append(out.image[~out.background_mask])
    fg = np.concatenate(fg) if fg else np.zeros((0, 3))
    if len(fg) == 0:
        return scene.copy()
    A, b = affine_color_map(fg, np.asarray(texture_image, dtype=np.float64)[..., :3])
    out = scene.copy()
    out.colors = out.colors @ A.T + b
    if clip:
        out.colors = np.clip(out.colors, 0.0, 1.0)
    return out


def scene_extent(cameras, scene=None):
    centers = np.array([c.center for c in cameras])
    radius = float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1))) if len(centers) else 0.0
    if radius <= 0 and scene is not None and len(scene):
        radius = float(np.max(np.linalg.norm(scene.means - scene.means.mean(axis=0), axis=1)))
    return 1.1 * max(radius, 1e-3)


# ---------------------------------------------------------------------------
# training state


@dataclass
class ViewCache:
    depth: np.ndarray
    background: np.ndarray
    content: np.ndarray
    content_features: np.ndarray
    I_d: np.ndarray
    I_f: np.ndarray


@dataclass
class TrainState:
    scene: GaussianScene
    cameras: list
    config: TransferConfig
    extractor: FeatureExtractor
    bank: TextureBank
    views: list
    opt: Adam
    opt_g: Adam
    stats: DensifyStats
    rng: np.random.Generator
    step: int = 0
    prev_target: Optional[TargetState] = None
    history: list = field(default_factory=list)
    correspondences: dict = field(default_factory=dict)
    initial_loss: Optional[float] = None
    over_count: int = 0
    last: dict = field(default_factory=dict)

    @property
    def cursor(self):
        return self.step % len(self.cameras)


def _learning_rates(cfg, extent):
    lr = {"means": cfg.lr_position * extent, "quats": cfg.lr_rotation, "log_scales": cfg.lr_scale,
          "opacity_logits": cfg.lr_opacity}
    return {**lr, "colors": cfg.lr_color}, {**lr, "colors_g": cfg.lr_color}


def init_state(scene: GaussianScene, cameras, texture_image, config: TransferConfig,
               content_images=None, extractor: FeatureExtractor | None = None) -> TrainState:
    """Cache per-view depth, frequency and content data from the scene as given, build the bank."""
    cfg = config.validate()
    if not cameras:
        raise ValueError("at least one camera is required")
    scene.validate()
    extractor = extractor or FeatureExtractor(seed=cfg.extractor_seed)
    if content_images is not None and len(content_images) != len(cameras):
        raise ValueError("need one content image per camera")
    views = []
    for v, cam in enumerate(cameras):
        out = render(scene, cam, APPEARANCE)
        content = out.image if content_images is None else np.asarray(content_images[v], dtype=np.float64)
        if content.shape != out.image.shape:
            raise ValueError(f"content image {v} has shape {content.shape}, expected {out.image.shape}")
        F_c = extractor.forward(content).data
        grid = F_c.shape[:2]
        bg = out.background_mask
        views.append(ViewCache(out.depth, bg, content, F_c,
                               cm.depth_control_map(out.depth, grid, bg),
                               cm.frequency_map(content, grid)))
    fg_depths = np.concatenate([vc.depth[~vc.background] for vc in views])
    if fg_depths.size == 0:
        fg_depths = np.concatenate([vc.depth.ravel() for vc in views])
    groups = build_depth_groups(fg_depths, cfg.K)
    if groups.fell_back:
        log.warning("only %d distinct depths; using %d depth groups", groups.K, groups.K)
    bank = build_bank(texture_image, groups, cfg.angle_step, extractor, max_per_cell=cfg.max_per_cell)
    work = scene.copy()
    if cfg.color_transfer and not cfg.gpb_only:
        work = color_transfer(work, texture_image, cameras)
    lrs, lrs_g = _learning_rates(cfg, scene_extent(cameras, scene))
    return TrainState(work, list(cameras), cfg, extractor, bank, views, Adam(lrs), Adam(lrs_g),
                      DensifyStats.zeros(len(work)), np.random.default_rng(cfg.seed))


def correspondence(state: TrainState, v, prev, grid) -> ViewCorrespondence:
    key = (v, prev)
    if key not in state.correspondences:
        a, b = state.views[v], state.views[prev]
        state.correspondences[key] = compute_correspondence(
            a.depth, state.cameras[v], b.depth, state.cameras[prev], grid, state.config.tau_rel,
            a.background, b.background)
    return state.correspondences[key]


def select_prior(state: TrainState, v, grid):
    """Prior for view ``v`` and the per-cell local rotations to apply to it."""
    cfg = state.config
    if cfg.no_prior:
        return None, None
    if state.prev_target is None:
        if cfg.pseudo_prior_angle is None:
            return None, None
        return PriorMap.pseudo(grid, cfg.pseudo_prior_angle), np.zeros(grid)
    corr = correspondence(state, v, state.prev_target.view, grid)
    return propagate_prior(state.prev_target, corr), corr.beta


def _post_step(scene):
    scene.normalize_quats()
    np.clip(scene.colors, 0.0, 1.0, out=scene.colors)
    np.clip(scene.colors_g, 0.0, 1.0, out=scene.colors_g)
    scene.validate()


def appearance_step(state: TrainState, v):
    cfg = state.config
    scene, cam, vc = state.scene, state.cameras[v], state.views[v]
    out = render(scene, cam, APPEARANCE)
    fm, ctx = state.extractor.forward(out.image, keep=True)
    F_r = fm.data
    grid = F_r.shape[:2]
    prior, betas = select_prior(state, v, grid)
    target = build_target_map(F_r, state.bank, prior, betas, cfg.lambda_p, view=v)
    if cfg.no_afcm:
        W = np.ones(grid)
        maps = None
    else:
        if prior is not None and prior.present.any() and cfg.lambda_p > 0:
            free = build_target_map(F_r, state.bank, None, None, 0.0, view=v)
            Phi = cm.distortion_map(target, free)
        else:
            Phi = np.zeros(grid)
        W = cm.weight_map(vc.I_d, vc.I_f, Phi, cfg.lambda_d, cfg.lambda_f, cfg.lambda_phi)
        maps = cm.ControlMaps(vc.I_d, vc.I_f, Phi, W)
    L_wgt, gF = weighted_gt2_loss_and_grad(F_r, target, W)
    L_c, gFc = content_loss_and_grad(F_r, vc.content_features)
    L_tv, gI_tv = tv_loss_and_grad(out.image)
    L_tot = cfg.lambda_wgt * L_wgt + cfg.lambda_c * L_c + cfg.lambda_tv * L_tv
    gI = state.extractor.backward(ctx, cfg.lambda_wgt * gF + cfg.lambda_c * gFc) + cfg.lambda_tv * gI_tv
    grads = backward(scene, cam, APPEARANCE, gI, output=out)
    state.stats.update(grads, out)
    params = scene.params()
    state.opt.step(params, grads.as_dict())
    _post_step(scene)
    state.prev_target = target
    state.last = {"target": target, "prior": prior, "maps": maps, "render": out}
    return {"L_wgt": L_wgt, "L_content": L_c, "L_tv": L_tv, "L_tot": L_tot}


def geometry_step(state: TrainState, v):
    """One reconstruction step of the geometry branch against the content image of view ``v``."""
    cfg = state.config
    scene, cam = state.scene, state.cameras[v]
    out = render(scene, cam, GEOMETRY)
    loss, g = rec_loss_and_grad(out.image, state.views[v].content, cfg.rec_ssim_weight)
    grads = backward(scene, cam, GEOMETRY, g, output=out)
    state.opt_g.step(scene.params(), grads.as_dict())
    _post_step(scene)
    return loss


def densify(state: TrainState):
    cfg = state.config
    new, parent, fresh = plan_densify(state.scene, state.stats, cfg.densify_grad_threshold,
                                      cfg.densify_size_threshold * scene_extent(state.cameras, state.scene),
                                      cfg.prune_opacity, state.rng)
    if len(new) == 0:
        log.warning("densification would remove every Gaussian; skipped")
        return
    state.opt.remap(parent, fresh)
    state.opt_g.remap(parent, fresh)
    state.stats = DensifyStats.zeros(len(new))
    state.scene = new


def _check_divergence(state, L_tot):
    if state.initial_loss is None:
        state.initial_loss = L_tot
        return
    if state.initial_loss > 0 and L_tot > DIVERGENCE_FACTOR * state.initial_loss:
        state.over_count += 1
    else:
        state.over_count = 0
    if state.over_count >= DIVERGENCE_PATIENCE:
        raise DivergenceError(
            f"total loss {L_tot:.6g} above {DIVERGENCE_FACTOR:g}x the initial {state.initial_loss:.6g} "
            f"for {DIVERGENCE_PATIENCE} consecutive steps (step {state.step})")


def train_step(state: TrainState):
    cfg = state.config
    v = state.cursor
    row = {"step": state.step, "view": v, "L_wgt": None, "L_content": None, "L_tv": None,
           "L_rec": None, "L_tot": None}
    if cfg.gpb_only:
        row["L_rec"] = geometry_step(state, v)
        row["L_tot"] = row["L_rec"]
    else:
        row.update(appearance_step(state, v))
        _check_divergence(state, row["L_tot"])
        if not cfg.no_gpb and (state.step + 1) % cfg.gpb_period == 0:
            row["L_rec"] = geometry_step(state, v)
        s = state.step + 1
        if (cfg.densify_interval > 0 and cfg.densify_from <= s <= cfg.densify_until
                and s % cfg.densify_interval == 0):
            densify(state)
    row["n_gaussians"] = len(state.scene)
    state.history.append(row)
    state.step += 1
    return row


def train(scene: GaussianScene, cameras, content_images, texture_image, config: TransferConfig,
          extractor=None, callback=None, return_state=False):
    """Run ``config.steps`` optimization steps, visiting views round-robin in list order."""
    state = init_state(scene, cameras, texture_image, config, content_images, extractor)
    for _ in range(config.steps):
        row = train_step(state)
        if callback is not None:
            callback(state, row)
    return state if return_state else state.scene


HISTORY_COLUMNS = ("step", "view", "L_wgt", "L_content", "L_tv", "L_rec", "L_tot", "n_gaussians")


def history_to_csv(history) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        cells = []
        for col in HISTORY_COLUMNS:
            val = row.get(col)
            cells.append("" if val is None else repr(float(val)) if isinstance(val, float) else str(val))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def windowed(values, window=25):
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")
