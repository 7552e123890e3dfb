"""Image and feature losses, each paired with its gradient."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
REC_SSIM_WEIGHT = 0.2


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def content_loss_and_grad(F_r, F_content):
    a = np.asarray(getattr(F_r, "data", F_r), dtype=np.float64)
    b = np.asarray(getattr(F_content, "data", F_content), dtype=np.float64)
    _same_shape(a, b)
    diff = a - b
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def content_loss(F_r, F_content):
    """Feature-space mean squared error, (1 / (N C)) sum |F_r - F_content|^2."""
    return content_loss_and_grad(F_r, F_content)[0]


def tv_loss_and_grad(image):
    """mean(dx^2) + mean(dy^2) over forward differences; an empty direction contributes 0."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    grad = np.zeros_like(img)
    loss = 0.0
    dx = img[:, 1:] - img[:, :-1]
    if dx.size:
        loss += float(np.mean(dx * dx))
        g = 2.0 * dx / dx.size
        grad[:, 1:] += g
        grad[:, :-1] -= g
    dy = img[1:] - img[:-1]
    if dy.size:
        loss += float(np.mean(dy * dy))
        g = 2.0 * dy / dy.size
        grad[1:] += g
        grad[:-1] -= g
    return loss, grad.reshape(np.shape(image))


def tv_loss(image):
    return tv_loss_and_grad(image)[0]


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _blur(x, win):
    # separable, zero padded outside the image
    x = correlate1d(x, win, axis=0, mode="constant")
    return correlate1d(x, win, axis=1, mode="constant")


def ssim_and_grad(x, y):
    """Mean SSIM over pixels and channels (11x11 Gaussian window, zero padding) and d/dx."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y)
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    win = gaussian_window()
    total = 0.0
    grad = np.zeros_like(x)
    n = x.size
    for ch in range(x.shape[2]):
        a, b = x[:, :, ch], y[:, :, ch]
        mu1, mu2 = _blur(a, win), _blur(b, win)
        s11 = _blur(a * a, win) - mu1 * mu1
        s22 = _blur(b * b, win) - mu2 * mu2
        s12 = _blur(a * b, win) - mu1 * mu2
        A1 = 2 * mu1 * mu2 + SSIM_C1
        A2 = 2 * s12 + SSIM_C2
        B1 = mu1 * mu1 + mu2 * mu2 + SSIM_C1
        B2 = s11 + s22 + SSIM_C2
        S = A1 * A2 / (B1 * B2)
        total += S.sum()
        dS_dmu1 = 2 * mu2 * A2 / (B1 * B2) - 2 * mu1 * S / B1
        dS_ds11 = -S / B2
        dS_ds12 = 2 * A1 / (B1 * B2)
        # express in raw moments: s11 = E[a^2] - mu1^2, s12 = E[ab] - mu1 mu2
        g_mu1 = dS_dmu1 - 2 * mu1 * dS_ds11 - mu2 * dS_ds12
        grad[:, :, ch] = (_blur(g_mu1, win) + 2 * a * _blur(dS_ds11, win)
                          + b * _blur(dS_ds12, win)) / n
    return total / n, grad.reshape(np.shape(x) if np.ndim(x) == 3 else x.shape)


def ssim(x, y):
    return ssim_and_grad(x, y)[0]


def rec_loss_and_grad(rendered, content, lam=REC_SSIM_WEIGHT):
    """(1 - lam) L1 + lam (1 - SSIM) / 2 and its gradient w.r.t. ``rendered``."""
    r = np.asarray(rendered, dtype=np.float64)
    c = np.asarray(content, dtype=np.float64)
    _same_shape(r, c)
    diff = r - c
    l1 = float(np.mean(np.abs(diff)))
    grad = (1 - lam) * np.sign(diff) / diff.size
    loss = (1 - lam) * l1
    if lam:
        s, gs = ssim_and_grad(r, c)
        loss += lam * (1 - s) / 2
        grad = grad - lam * gs.reshape(grad.shape) / 2
    return loss, grad


def rec_loss(rendered, content, lam=REC_SSIM_WEIGHT):
    return rec_loss_and_grad(rendered, content, lam)[0]
