"""Texture feature bank tagged with depth-group scale and rotation angle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import MIN_SIZE, FeatureExtractor
from .imageio import write_float_array
from .imops import rescale, rotate_crop


@dataclass
class DepthGroups:
    K: int
    bounds: np.ndarray
    depths: np.ndarray
    scales: np.ndarray
    requested_K: int
    mode: str = "quantile"

    @property
    def fell_back(self):
        return self.K < self.requested_K


def build_depth_groups(depth_map, K=4, mask=None, mode="quantile") -> DepthGroups:
    """Split the finite depths into K groups; group scale is nearest-group depth / group depth.

    ``mask`` selects the pixels to use (e.g. the non-background ones).  With fewer than K
    distinct depths every distinct value becomes its own group.
    """
    d = np.asarray(depth_map, dtype=np.float64)
    if mask is not None:
        d = d[np.asarray(mask, dtype=bool)]
    d = np.sort(d[np.isfinite(d) & (d > 0)].ravel())
    if d.size == 0:
        raise ValueError("depth map has no finite positive values")
    distinct = np.unique(d)
    if len(distinct) < K:
        reps = distinct
        mids = 0.5 * (distinct[1:] + distinct[:-1])
        bounds = np.concatenate([[distinct[0]], mids, [distinct[-1]]])
    elif mode == "quantile":
        chunks = np.array_split(d, K)
        reps = np.array([np.median(c) for c in chunks])
        bounds = np.array([c[0] for c in chunks] + [d[-1]])
    elif mode == "width":
        bounds = np.linspace(d[0], d[-1], K + 1)
        group = np.clip(np.searchsorted(bounds, d, side="right") - 1, 0, K - 1)
        reps = np.array([np.median(d[group == k]) if np.any(group == k)
                         else 0.5 * (bounds[k] + bounds[k + 1]) for k in range(K)])
    else:
        raise ValueError(f"unknown grouping mode {mode!r}")
    reps = np.maximum.accumulate(reps)
    return DepthGroups(len(reps), bounds, reps, reps[0] / reps, K, mode)


@dataclass
class TextureBank:
    features: np.ndarray
    k: np.ndarray
    theta: np.ndarray
    angles: np.ndarray
    scales: np.ndarray
    present: np.ndarray

    @property
    def K(self):
        return len(self.scales)

    @property
    def angle_step(self):
        return 360.0 if len(self.angles) == 1 else float(self.angles[1] - self.angles[0])

    def __len__(self):
        return len(self.features)

    def cells(self):
        return sorted({(int(k), float(t)) for k, t in zip(self.k, self.theta)})

    def dump(self, path):
        write_float_array(path, self.features, np.stack([self.k, self.theta], axis=1))


def angle_grid(angle_step):
    if not 0 < angle_step <= 360:
        raise ValueError("angle_step must be in (0, 360]")
    n = max(1, int(round(360.0 / angle_step)))
    return np.arange(n) * (360.0 / n)


def _subsample(vectors, limit):
    if limit is None or len(vectors) <= limit:
        return vectors
    idx = np.unique(np.round(np.linspace(0, len(vectors) - 1, limit)).astype(np.int64))
    return vectors[idx]


def build_bank(texture, groups: DepthGroups, angle_step, extractor: FeatureExtractor,
               max_per_cell=None, border=1) -> TextureBank:
    """Rescale the texture per depth group, rotate over the full circle, extract features.

    Entries are ordered by (group, angle, position).  ``border`` feature cells are dropped
    on each side of every map; ``max_per_cell`` evenly subsamples each (group, angle) cell.
    """
    texture = np.asarray(texture, dtype=np.float64)
    angles = angle_grid(angle_step)
    present = np.zeros((groups.K, len(angles)), dtype=bool)
    feats, ks, thetas = [], [], []
    for k, scale in enumerate(groups.scales):
        scaled = rescale(texture, scale)
        if min(scaled.shape[:2]) < MIN_SIZE:
            continue
        for a, theta in enumerate(angles):
            rotated = rotate_crop(scaled, theta)
            if min(rotated.shape[:2]) < MIN_SIZE:
                continue
            data = extractor.forward(rotated).data
            if border and min(data.shape[:2]) > 2 * border:
                data = data[border:-border, border:-border]
            vecs = _subsample(data.reshape(-1, data.shape[2]), max_per_cell)
            feats.append(vecs)
            ks.append(np.full(len(vecs), k, dtype=np.int64))
            thetas.append(np.full(len(vecs), theta))
            present[k, a] = True
    if not feats:
        raise ValueError("texture bank is empty: texture too small for every depth group")
    return TextureBank(np.concatenate(feats), np.concatenate(ks), np.concatenate(thetas),
                       angles, np.asarray(groups.scales, dtype=np.float64), present)
