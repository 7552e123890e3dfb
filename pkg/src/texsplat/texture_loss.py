"""Target feature maps with a propagated orientation prior, and the matching losses.

Each rendered feature cell is matched to one bank entry by minimizing cosine
distance plus, where the cell has an orientation prior, a penalty on the wrapped
angle between the entry's rotation and (prior angle + local view rotation).
The matched features are then held fixed while the loss is minimized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import STRIDE, FeatureMap, cosine_distance, cosine_distance_grad, cosine_distance_matrix
from .texture_bank import TextureBank
from .view_geometry import ViewCorrespondence, angle_difference

LAMBDA_P = 0.5
PROPAGATED = "propagated"
PSEUDO = "pseudo-injected"
NONE = "none"


@dataclass
class PriorMap:
    theta: np.ndarray     # (h, w) degrees, NaN where absent
    k: np.ndarray         # (h, w) group index, -1 where absent
    source: str = NONE

    @property
    def present(self):
        return np.isfinite(self.theta)

    @classmethod
    def absent(cls, grid_shape):
        return cls(np.full(grid_shape, np.nan), np.full(grid_shape, -1, dtype=np.int64), NONE)

    @classmethod
    def pseudo(cls, grid_shape, angle):
        return cls(np.full(grid_shape, float(angle) % 360.0),
                   np.full(grid_shape, -1, dtype=np.int64), PSEUDO)


@dataclass
class TargetState:
    features: np.ndarray  # (h, w, C)
    index: np.ndarray     # (h, w) bank entry index
    k: np.ndarray
    theta: np.ndarray
    view: int = -1

    @property
    def shape(self):
        return self.index.shape


def _as_array(F):
    return F.data if isinstance(F, FeatureMap) else np.asarray(F, dtype=np.float64)


def build_target_map(F_r, bank: TextureBank, prior: PriorMap | None = None, betas=None,
                     lambda_p=LAMBDA_P, view=-1, chunk=256) -> TargetState:
    F = _as_array(F_r)
    if len(bank) == 0:
        raise ValueError("texture bank is empty")
    h, w, c = F.shape
    if bank.features.shape[1] != c:
        raise ValueError(f"bank channels {bank.features.shape[1]} != feature channels {c}")
    vecs = F.reshape(-1, c)
    target_angle = np.full(h * w, np.nan)
    if prior is not None and lambda_p > 0:
        b = np.zeros((h, w)) if betas is None else np.asarray(betas, dtype=np.float64)
        target_angle = (prior.theta + b).reshape(-1)
    has_prior = np.isfinite(target_angle)
    idx = np.empty(h * w, dtype=np.int64)
    for s in range(0, h * w, chunk):
        sl = slice(s, min(s + chunk, h * w))
        cost = cosine_distance_matrix(vecs[sl], bank.features)
        hp = has_prior[sl]
        if hp.any():
            cost[hp] += lambda_p * angle_difference(target_angle[sl][hp][:, None],
                                                    bank.theta[None, :]) / 180.0
        # entries are ordered (k, theta, position), so first-minimum is the tie-break
        idx[sl] = np.argmin(cost, axis=1)
    return TargetState(bank.features[idx].reshape(h, w, c), idx.reshape(h, w),
                       bank.k[idx].reshape(h, w), bank.theta[idx].reshape(h, w), view)


def _check(F, target):
    if F.shape != target.features.shape:
        raise ValueError(f"feature map {F.shape} does not match target {target.features.shape}")


def gt2_loss(F_r, target: TargetState) -> float:
    F = _as_array(F_r)
    _check(F, target)
    c = F.shape[2]
    return float(np.mean(cosine_distance(F.reshape(-1, c), target.features.reshape(-1, c))))


def weighted_gt2_loss(F_r, target: TargetState, weights) -> float:
    return weighted_gt2_loss_and_grad(F_r, target, weights)[0]


def weighted_gt2_loss_and_grad(F_r, target: TargetState, weights=None):
    """(1/N) sum W * dist(F_r, F_t) and its gradient w.r.t. F_r (target held fixed)."""
    F = _as_array(F_r)
    _check(F, target)
    h, w, c = F.shape
    W = np.ones((h, w)) if weights is None else np.asarray(weights, dtype=np.float64)
    if W.shape != (h, w):
        raise ValueError(f"weight map {W.shape} does not match feature grid {(h, w)}")
    a = F.reshape(-1, c)
    b = target.features.reshape(-1, c)
    n = h * w
    d = cosine_distance(a, b)
    loss = float(np.sum(W.reshape(-1) * d) / n)
    grad = cosine_distance_grad(a, b) * (W.reshape(-1, 1) / n)
    return loss, grad.reshape(h, w, c)


def propagate_prior(prev: TargetState, corr: ViewCorrespondence, stride=STRIDE) -> PriorMap:
    """Carry the previous view's (k, theta) choices to the current cells that land on it."""
    ph, pw = prev.shape
    usable = corr.usable
    px = np.nan_to_num(corr.prior_pixels[..., 0])
    py = np.nan_to_num(corr.prior_pixels[..., 1])
    j = np.clip(np.floor((px + 0.5) / stride).astype(np.int64), 0, pw - 1)
    i = np.clip(np.floor((py + 0.5) / stride).astype(np.int64), 0, ph - 1)
    theta = np.where(usable, prev.theta[i, j], np.nan)
    k = np.where(usable, prev.k[i, j], -1)
    return PriorMap(theta, k, PROPAGATED if usable.any() else NONE)


def nearest_grid_angle(angles, target):
    """Grid angle closest (wrapped) to ``target``; ties go to the smaller angle."""
    diff = angle_difference(np.asarray(angles)[None, :], np.atleast_1d(target)[:, None])
    return np.asarray(angles)[np.argmin(diff, axis=1)]
