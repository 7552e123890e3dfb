"""Per-tile alpha compositing kernels.

Two implementations of the same arithmetic: scalar loops compiled with numba
and a vectorized numpy path.  Both walk each tile's depth-sorted list front to
back, clamp alpha at ``ALPHA_MAX`` and stop a pixel once the transmittance
would fall below ``T_MIN`` (the Gaussian that would cross it is dropped).
"""

import math

import numpy as np

from ._jit import njit

TILE = 16
ALPHA_MAX = 0.99
T_MIN = 1e-4


@njit(cache=True)
def _forward_numba(offsets, ids, means2d, conics, opac, colors, depths, bg, height, width):
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    image = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    t_final = np.ones((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int64)
    for ty in range(nty):
        for tx in range(ntx):
            tile = ty * ntx + tx
            start = offsets[tile]
            end = offsets[tile + 1]
            for y in range(ty * TILE, min((ty + 1) * TILE, height)):
                for x in range(tx * TILE, min((tx + 1) * TILE, width)):
                    T = 1.0
                    c0 = 0.0
                    c1 = 0.0
                    c2 = 0.0
                    d = 0.0
                    count = 0
                    for j in range(start, end):
                        g = ids[j]
                        dx = x - means2d[g, 0]
                        dy = y - means2d[g, 1]
                        power = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) \
                            - conics[g, 1] * dx * dy
                        alpha = min(ALPHA_MAX, opac[g] * math.exp(power))
                        test_t = T * (1.0 - alpha)
                        if test_t < T_MIN:
                            break
                        w = T * alpha
                        c0 += w * colors[g, 0]
                        c1 += w * colors[g, 1]
                        c2 += w * colors[g, 2]
                        d += w * depths[g]
                        T = test_t
                        count += 1
                    image[y, x, 0] = c0 + T * bg[0]
                    image[y, x, 1] = c1 + T * bg[1]
                    image[y, x, 2] = c2 + T * bg[2]
                    depth[y, x] = d
                    t_final[y, x] = T
                    n_contrib[y, x] = count
    return image, depth, t_final, n_contrib


@njit(cache=True)
def _backward_numba(offsets, ids, means2d, conics, opac, colors, depths, bg, height, width,
                    t_final, n_contrib, grad_image, grad_depth, n_gauss):
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    g_means2d = np.zeros((n_gauss, 2))
    g_conics = np.zeros((n_gauss, 3))
    g_opac = np.zeros(n_gauss)
    g_colors = np.zeros((n_gauss, 3))
    g_depths = np.zeros(n_gauss)
    for ty in range(nty):
        for tx in range(ntx):
            tile = ty * ntx + tx
            start = offsets[tile]
            for y in range(ty * TILE, min((ty + 1) * TILE, height)):
                for x in range(tx * TILE, min((tx + 1) * TILE, width)):
                    gc0 = grad_image[y, x, 0]
                    gc1 = grad_image[y, x, 1]
                    gc2 = grad_image[y, x, 2]
                    gd = grad_depth[y, x]
                    if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0 and gd == 0.0:
                        continue
                    T = t_final[y, x]
                    r0 = T * bg[0]
                    r1 = T * bg[1]
                    r2 = T * bg[2]
                    rd = 0.0
                    for j in range(start + n_contrib[y, x] - 1, start - 1, -1):
                        g = ids[j]
                        dx = x - means2d[g, 0]
                        dy = y - means2d[g, 1]
                        ca = conics[g, 0]
                        cb = conics[g, 1]
                        cc = conics[g, 2]
                        power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
                        gv = math.exp(power)
                        a_raw = opac[g] * gv
                        alpha = min(ALPHA_MAX, a_raw)
                        inv = 1.0 / (1.0 - alpha)
                        Ti = T * inv
                        w = Ti * alpha
                        g_colors[g, 0] += w * gc0
                        g_colors[g, 1] += w * gc1
                        g_colors[g, 2] += w * gc2
                        g_depths[g] += w * gd
                        dl_da = (Ti * colors[g, 0] - r0 * inv) * gc0 \
                            + (Ti * colors[g, 1] - r1 * inv) * gc1 \
                            + (Ti * colors[g, 2] - r2 * inv) * gc2 \
                            + (Ti * depths[g] - rd * inv) * gd
                        r0 += w * colors[g, 0]
                        r1 += w * colors[g, 1]
                        r2 += w * colors[g, 2]
                        rd += w * depths[g]
                        T = Ti
                        if a_raw < ALPHA_MAX:
                            g_opac[g] += dl_da * gv
                            dl_dp = dl_da * opac[g] * gv
                            g_conics[g, 0] += -0.5 * dx * dx * dl_dp
                            g_conics[g, 1] += -dx * dy * dl_dp
                            g_conics[g, 2] += -0.5 * dy * dy * dl_dp
                            g_means2d[g, 0] += (ca * dx + cb * dy) * dl_dp
                            g_means2d[g, 1] += (cc * dy + cb * dx) * dl_dp
    return g_means2d, g_conics, g_opac, g_colors, g_depths


def _tile_pixels(tile, ntx, height, width):
    ty, tx = divmod(tile, ntx)
    ys = np.arange(ty * TILE, min((ty + 1) * TILE, height))
    xs = np.arange(tx * TILE, min((tx + 1) * TILE, width))
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return yy.ravel(), xx.ravel()


def _tile_alpha(lst, xx, yy, means2d, conics, opac):
    dx = xx[None, :] - means2d[lst, 0][:, None]
    dy = yy[None, :] - means2d[lst, 1][:, None]
    ca, cb, cc = (conics[lst, k][:, None] for k in range(3))
    power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy
    gv = np.exp(power)
    a_raw = opac[lst][:, None] * gv
    alpha = np.minimum(ALPHA_MAX, a_raw)
    # front-to-back early stop: the first Gaussian that would push T under T_MIN and all after it
    stop = np.cumprod(1.0 - alpha, axis=0) < T_MIN
    first = np.where(stop.any(axis=0), stop.argmax(axis=0), len(lst))
    keep = np.arange(len(lst))[:, None] < first[None, :]
    alpha = np.where(keep, alpha, 0.0)
    return dx, dy, gv, a_raw, alpha, keep, first


def _forward_numpy(offsets, ids, means2d, conics, opac, colors, depths, bg, height, width):
    ntx = (width + TILE - 1) // TILE
    image = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    t_final = np.ones((height, width))
    n_contrib = np.zeros((height, width), dtype=np.int64)
    for tile in range(len(offsets) - 1):
        yy, xx = _tile_pixels(tile, ntx, height, width)
        lst = ids[offsets[tile]:offsets[tile + 1]]
        if len(lst) == 0:
            image[yy, xx] = bg
            continue
        _, _, _, _, alpha, _, first = _tile_alpha(lst, xx, yy, means2d, conics, opac)
        trans = np.cumprod(1.0 - alpha, axis=0)
        t_before = np.vstack([np.ones((1, len(xx))), trans[:-1]])
        w = t_before * alpha
        T = trans[-1]
        image[yy, xx] = w.T @ colors[lst] + T[:, None] * bg[None, :]
        depth[yy, xx] = w.T @ depths[lst]
        t_final[yy, xx] = T
        n_contrib[yy, xx] = first
    return image, depth, t_final, n_contrib


def _backward_numpy(offsets, ids, means2d, conics, opac, colors, depths, bg, height, width,
                    t_final, n_contrib, grad_image, grad_depth, n_gauss):
    ntx = (width + TILE - 1) // TILE
    g_means2d = np.zeros((n_gauss, 2))
    g_conics = np.zeros((n_gauss, 3))
    g_opac = np.zeros(n_gauss)
    g_colors = np.zeros((n_gauss, 3))
    g_depths = np.zeros(n_gauss)
    for tile in range(len(offsets) - 1):
        lst = ids[offsets[tile]:offsets[tile + 1]]
        if len(lst) == 0:
            continue
        yy, xx = _tile_pixels(tile, ntx, height, width)
        gc = grad_image[yy, xx]                       # (P, 3)
        gd = grad_depth[yy, xx]                       # (P,)
        dx, dy, gv, a_raw, alpha, keep, _ = _tile_alpha(lst, xx, yy, means2d, conics, opac)
        trans = np.cumprod(1.0 - alpha, axis=0)
        t_before = np.vstack([np.ones((1, len(xx))), trans[:-1]])
        w = t_before * alpha                          # (n, P)
        T = trans[-1]
        col = colors[lst]                             # (n, 3)
        dep = depths[lst]
        wc = w[:, :, None] * col[:, None, :]          # (n, P, 3)
        # contributions strictly behind each Gaussian, background included
        rest_c = np.cumsum(wc[::-1], axis=0)[::-1] - wc + (T[:, None] * bg[None, :])[None]
        wd = w * dep[:, None]
        rest_d = np.cumsum(wd[::-1], axis=0)[::-1] - wd
        inv = 1.0 / (1.0 - alpha)
        dl_da = ((t_before[:, :, None] * col[:, None, :] - rest_c * inv[:, :, None])
                 * gc[None]).sum(axis=2)
        dl_da += (t_before * dep[:, None] - rest_d * inv) * gd[None, :]
        g_colors[lst] += w @ gc
        g_depths[lst] += w @ gd
        active = keep & (a_raw < ALPHA_MAX)
        dl_da = np.where(active, dl_da, 0.0)
        g_opac[lst] += (dl_da * gv).sum(axis=1)
        dl_dp = dl_da * opac[lst][:, None] * gv
        g_conics[lst, 0] += (-0.5 * dx * dx * dl_dp).sum(axis=1)
        g_conics[lst, 1] += (-dx * dy * dl_dp).sum(axis=1)
        g_conics[lst, 2] += (-0.5 * dy * dy * dl_dp).sum(axis=1)
        ca, cb, cc = (conics[lst, k][:, None] for k in range(3))
        g_means2d[lst, 0] += ((ca * dx + cb * dy) * dl_dp).sum(axis=1)
        g_means2d[lst, 1] += ((cc * dy + cb * dx) * dl_dp).sum(axis=1)
    return g_means2d, g_conics, g_opac, g_colors, g_depths


def composite_forward(backend, *args):
    if backend == "numba":
        return _forward_numba(*args)
    return _forward_numpy(*args)


def composite_backward(backend, *args):
    if backend == "numba":
        return _backward_numba(*args)
    return _backward_numpy(*args)
