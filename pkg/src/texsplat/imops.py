"""Small image resampling helpers (bilinear, pixel centres at integer coordinates)."""

import math

import numpy as np
from scipy import ndimage


def bilinear_sample(img, x, y):
    """Sample ``img`` (H, W[, C]) at float coordinates; coordinates are clamped to the border."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize aligning pixel edges (half-pixel centres)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, xx, yy)


def rescale(img, factor, antialias=True):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    out_h = max(1, int(round(h * factor)))
    out_w = max(1, int(round(w * factor)))
    if antialias and factor < 1:
        sigma = max(0.0, (1.0 / factor - 1.0) / 2.0)
        sig = (sigma, sigma, 0) if img.ndim == 3 else sigma
        img = ndimage.gaussian_filter(img, sig, mode="nearest")
    return resize_bilinear(img, out_h, out_w)


def rotate_crop(img, angle_deg):
    """Rotate the image content counter-clockwise (as displayed) by ``angle_deg`` about its
    centre and return the largest centred axis-aligned square that holds only valid samples."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    m = min(h, w)
    y0, x0 = (h - m) // 2, (w - m) // 2
    img = img[y0:y0 + m, x0:x0 + m]
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    side = int(math.floor(m / (abs(c) + abs(s)) + 1e-9))
    ctr = (m - 1) / 2.0
    off = (side - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(side) - off, np.arange(side) - off, indexing="ij")
    # output offset p samples the source at R(theta) p (y axis points down)
    sx = ctr + c * xx - s * yy
    sy = ctr + s * xx + c * yy
    return bilinear_sample(img, sx, sy)


def to_luma(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def minmax_normalize(x):
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if not hi > lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)
