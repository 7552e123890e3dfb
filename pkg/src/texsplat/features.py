"""Dense convolutional descriptors at stride 4, and cosine distance.

The default extractor is three 3x3 convolution stages (32/64/128 channels,
ReLU) with 2x2 average pooling after the first two, i.e. the same stride as
VGG-16 ``conv3``.  Filters come from a fixed-seed orthogonal initialization;
real weights can be loaded from a float-grid file (see ``imageio``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imageio import read_float_arrays, write_float_array

STRIDE = 4
MIN_SIZE = 16
COS_EPS = 1e-8
IMAGE_MEAN = np.array([0.485, 0.456, 0.406])
IMAGE_STD = np.array([0.229, 0.224, 0.225])


@dataclass
class FeatureMap:
    data: np.ndarray
    stride: int = STRIDE

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def vectors(self):
        return self.data.reshape(-1, self.channels)


def _orthogonal(rng, fan_in, fan_out):
    a = rng.normal(size=(max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if fan_in >= fan_out else q.T


def _edge_pad_adjoint(g):
    out = g[1:-1, 1:-1].copy()
    out[0] += g[0, 1:-1]
    out[-1] += g[-1, 1:-1]
    out[:, 0] += g[1:-1, 0]
    out[:, -1] += g[1:-1, -1]
    out[0, 0] += g[0, 0]
    out[0, -1] += g[0, -1]
    out[-1, 0] += g[-1, 0]
    out[-1, -1] += g[-1, -1]
    return out


def _conv3x3(x, weight, bias):
    h, w, c = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)), mode="edge")
    cols = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(0, 1))
    cols = cols.reshape(h * w, c * 9)
    return (cols @ weight + bias).reshape(h, w, -1)


def _conv3x3_backward(g, weight, shape):
    h, w, c = shape
    gcols = (g.reshape(h * w, -1) @ weight.T).reshape(h, w, c, 3, 3)
    gp = np.zeros((h + 2, w + 2, c))
    for ky in range(3):
        for kx in range(3):
            gp[ky:ky + h, kx:kx + w] += gcols[:, :, :, ky, kx]
    return _edge_pad_adjoint(gp)


def _pool2(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _pool2_backward(g):
    return np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25


class FeatureExtractor:
    """Stacked 3x3 conv + ReLU stages; ``pool_after`` lists stages followed by 2x2 pooling.

    Weight matrices are ``(c_in * 9, c_out)`` with rows ordered (c_in, ky, kx), i.e.
    a PyTorch ``(c_out, c_in, 3, 3)`` kernel reshaped to ``(c_out, -1)`` and transposed.
    """

    def __init__(self, layers=None, channels=(32, 64, 128), seed=0, pool_after=(0, 1)):
        if layers is None:
            rng = np.random.default_rng(seed)
            layers, c_in = [], 3
            for c_out in channels:
                # sqrt(2) keeps activation scale roughly constant through ReLU
                layers.append((np.sqrt(2.0) * _orthogonal(rng, 9 * c_in, c_out), np.zeros(c_out)))
                c_in = c_out
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64).reshape(-1))
                       for w, b in layers]
        self.pool_after = tuple(pool_after)
        if 2 ** len(self.pool_after) != STRIDE:
            raise ValueError("extractor must downsample by exactly 4")
        self.seed = seed
        c_in = 3
        for i, (w, b) in enumerate(self.layers):
            if w.shape[0] != 9 * c_in or b.shape[0] != w.shape[1]:
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            c_in = w.shape[1]

    @property
    def channels(self):
        return self.layers[-1][0].shape[1]

    @classmethod
    def from_file(cls, path, pool_after=(0, 1)):
        arrays = read_float_arrays(path)
        if len(arrays) % 2:
            raise ValueError(f"{path}: expected weight/bias record pairs")
        layers = [(arrays[i][:, :, 0], arrays[i + 1].reshape(-1)) for i in range(0, len(arrays), 2)]
        return cls(layers=layers, pool_after=pool_after)

    def save(self, path):
        write_float_array(path, *[a for w, b in self.layers for a in (w, b[None, :])])

    def forward(self, image, keep=False):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an H x W x 3 image, got {image.shape}")
        h, w = image.shape[:2]
        if h < MIN_SIZE or w < MIN_SIZE:
            raise ValueError(f"image {h}x{w} is smaller than {MIN_SIZE}x{MIN_SIZE}")
        ph, pw = -h % STRIDE, -w % STRIDE
        x = (image - IMAGE_MEAN) / IMAGE_STD
        x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge")
        cache = []
        for i, (wt, b) in enumerate(self.layers):
            pre = _conv3x3(x, wt, b)
            cache.append((x.shape, pre))
            x = np.maximum(pre, 0.0)
            if i in self.pool_after:
                x = _pool2(x)
        fm = FeatureMap(x)
        if keep:
            return fm, {"cache": cache, "shape": (h, w), "pad": (ph, pw)}
        return fm

    def backward(self, ctx, grad):
        """Gradient w.r.t. the input image given dL/d(features)."""
        g = np.asarray(grad, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            shape, pre = ctx["cache"][i]
            if i in self.pool_after:
                g = _pool2_backward(g)
            g = g * (pre > 0)
            g = _conv3x3_backward(g, self.layers[i][0], shape)
        h, w = ctx["shape"]
        ph, pw = ctx["pad"]
        if ph:
            g[h - 1] += g[h:].sum(axis=0)
        if pw:
            g[:, w - 1] += g[:, w:].sum(axis=1)
        return g[:h, :w] / IMAGE_STD

    def __call__(self, image):
        return self.forward(image)


def extract(extractor: FeatureExtractor, image) -> FeatureMap:
    return extractor.forward(image)


# ---------------------------------------------------------------------------
# cosine distance


def cosine_distance(a, b, eps=COS_EPS):
    """1 - a.b / (|a| |b|), with eps added to each norm; two zero vectors are at distance 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    d = 1.0 - np.sum(a * b, axis=-1) / ((na + eps) * (nb + eps))
    d = np.where((na == 0) & (nb == 0), 0.0, d)
    return float(d) if np.ndim(d) == 0 else d


def cosine_distance_grad(a, b, eps=COS_EPS):
    """d cosine_distance(a, b) / d a, row-wise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    dot = np.sum(a * b, axis=-1, keepdims=True)
    den = (na + eps) * (nb + eps)
    unit_a = np.divide(a, na, out=np.zeros_like(a), where=na > 0)
    return -(b / den - dot * unit_a / ((na + eps) * den))


def cosine_distance_matrix(A, B, eps=COS_EPS):
    """All-pairs distances between rows of A (n, C) and rows of B (m, C)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    d = 1.0 - (A / (na + eps)[:, None]) @ (B / (nb + eps)[:, None]).T
    both_zero = (na == 0)[:, None] & (nb == 0)[None, :]
    return np.where(both_zero, 0.0, d)
