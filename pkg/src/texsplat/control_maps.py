"""Per-cell weighting of the texture loss from depth, frequency content and distortion.

All three inputs are min-max normalized per view (constant maps become zeros)
and combined as W = l_d (1 - I_d) + l_f (1 - I_f) + l_phi (1 - Phi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn

from .imops import minmax_normalize, resize_bilinear, to_luma
from .view_geometry import angle_difference

LAMBDA_D = 0.8
LAMBDA_F = 0.8
LAMBDA_PHI = 0.25
BLOCK = 8


@dataclass
class ControlMaps:
    I_d: np.ndarray
    I_f: np.ndarray
    Phi: np.ndarray
    W: np.ndarray


def block_dct_density(gray, block=BLOCK):
    """Sum of |DCT-II| coefficients (orthonormal, DC excluded) for each block, zero-padded."""
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    g = np.pad(g, ((0, -h % block), (0, -w % block)))
    nby, nbx = g.shape[0] // block, g.shape[1] // block
    blocks = g.reshape(nby, block, nbx, block).transpose(0, 2, 1, 3)
    coeffs = dctn(blocks, type=2, axes=(2, 3), norm="ortho")
    coeffs[:, :, 0, 0] = 0.0
    return np.abs(coeffs).sum(axis=(2, 3))


def frequency_map(content_image, grid_shape):
    """Normalized frequency density of the content image on the feature grid."""
    img = np.asarray(content_image, dtype=np.float64)
    gray = to_luma(img) if img.ndim == 3 else img
    if min(gray.shape) < BLOCK:
        raise ValueError("image must be at least 8x8")
    dens = block_dct_density(gray)
    return minmax_normalize(resize_bilinear(dens, *grid_shape))


def depth_control_map(depth, grid_shape, background=None):
    """Normalized depth on the feature grid; background pixels take the deepest foreground value."""
    d = np.asarray(depth, dtype=np.float64).copy()
    fg = np.isfinite(d)
    if background is not None:
        fg &= ~np.asarray(background, dtype=bool)
    if fg.any():
        d[~fg] = d[fg].max()
    else:
        d[:] = 0.0
    return minmax_normalize(resize_bilinear(d, *grid_shape))


def distortion_map(prior_selection, free_selection):
    """Normalized wrapped angle between prior-informed and prior-free matches, per cell."""
    diff = angle_difference(prior_selection.theta, free_selection.theta) / 180.0
    return minmax_normalize(diff)


def weight_map(I_d, I_f, Phi, lambda_d=LAMBDA_D, lambda_f=LAMBDA_F, lambda_phi=LAMBDA_PHI):
    I_d, I_f, Phi = (np.asarray(a, dtype=np.float64) for a in (I_d, I_f, Phi))
    if not (I_d.shape == I_f.shape == Phi.shape):
        raise ValueError(f"map shapes differ: {I_d.shape}, {I_f.shape}, {Phi.shape}")
    if min(lambda_d, lambda_f, lambda_phi) < 0:
        raise ValueError("weights must be non-negative")
    return lambda_d * (1.0 - I_d) + lambda_f * (1.0 - I_f) + lambda_phi * (1.0 - Phi)


def control_maps(I_d, I_f, prior_selection, free_selection, lambdas=(LAMBDA_D, LAMBDA_F, LAMBDA_PHI)):
    Phi = distortion_map(prior_selection, free_selection)
    return ControlMaps(I_d, I_f, Phi, weight_map(I_d, I_f, Phi, *lambdas))
