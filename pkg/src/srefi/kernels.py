"""Per-pixel inner loops: triangle rasterization, bilinear warping, 5-tap filtering.

Each kernel has a numba implementation (``*_jit``) and a vectorized numpy
implementation (``*_np``). The public wrappers dispatch on
:func:`srefi._jit.use_numba` unless a call passes ``jit=``; both paths perform the same floating point
operations in the same order, so rasterization is bit-identical between them
and filtered values agree to rounding.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ._jit import njit, use_numba


def _pick(jit: Optional[bool]) -> bool:
    return use_numba() if jit is None else jit

# ---------------------------------------------------------------------------
# Rasterization
#
# Pixel centres sit at integer coordinates. Each edge is evaluated with its
# endpoints in canonical (lexicographic) order so that two triangles sharing
# an edge compute bit-identical edge values; a point lying exactly on an edge
# belongs to the triangle on the positive side. Every pixel of a tiling is
# therefore owned by exactly one triangle.


@njit
def _edge_sign_jit(ax, ay, bx, by, ox, oy):
    if bx < ax or (bx == ax and by < ay):
        ax, ay, bx, by = bx, by, ax, ay
    e = (bx - ax) * (oy - ay) - (by - ay) * (ox - ax)
    if e > 0:
        return ax, ay, bx, by, 1.0
    return ax, ay, bx, by, -1.0


@njit
def _rasterize_jit(tris, height, width, out):
    for t in range(tris.shape[0]):
        x0 = tris[t, 0, 0]
        y0 = tris[t, 0, 1]
        x1 = tris[t, 1, 0]
        y1 = tris[t, 1, 1]
        x2 = tris[t, 2, 0]
        y2 = tris[t, 2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 == 0.0:
            continue
        a0x, a0y, b0x, b0y, s0 = _edge_sign_jit(x1, y1, x2, y2, x0, y0)
        a1x, a1y, b1x, b1y, s1 = _edge_sign_jit(x2, y2, x0, y0, x1, y1)
        a2x, a2y, b2x, b2y, s2 = _edge_sign_jit(x0, y0, x1, y1, x2, y2)
        xmin = max(0, int(np.ceil(min(x0, min(x1, x2)))))
        xmax = min(width - 1, int(np.floor(max(x0, max(x1, x2)))))
        ymin = max(0, int(np.ceil(min(y0, min(y1, y2)))))
        ymax = min(height - 1, int(np.floor(max(y0, max(y1, y2)))))
        for py in range(ymin, ymax + 1):
            fy = float(py)
            for px in range(xmin, xmax + 1):
                fx = float(px)
                e0 = s0 * ((b0x - a0x) * (fy - a0y) - (b0y - a0y) * (fx - a0x))
                if e0 < 0.0 or (e0 == 0.0 and s0 < 0.0):
                    continue
                e1 = s1 * ((b1x - a1x) * (fy - a1y) - (b1y - a1y) * (fx - a1x))
                if e1 < 0.0 or (e1 == 0.0 and s1 < 0.0):
                    continue
                e2 = s2 * ((b2x - a2x) * (fy - a2y) - (b2y - a2y) * (fx - a2x))
                if e2 < 0.0 or (e2 == 0.0 and s2 < 0.0):
                    continue
                out[py, px] = t


def _edge_sign_np(ax, ay, bx, by, ox, oy):
    if bx < ax or (bx == ax and by < ay):
        ax, ay, bx, by = bx, by, ax, ay
    e = (bx - ax) * (oy - ay) - (by - ay) * (ox - ax)
    return ax, ay, bx, by, (1.0 if e > 0 else -1.0)


def _rasterize_np(tris, height, width, out):
    for t in range(tris.shape[0]):
        (x0, y0), (x1, y1), (x2, y2) = tris[t].tolist()
        if (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0) == 0.0:
            continue
        xmin = max(0, int(np.ceil(min(x0, x1, x2))))
        xmax = min(width - 1, int(np.floor(max(x0, x1, x2))))
        ymin = max(0, int(np.ceil(min(y0, y1, y2))))
        ymax = min(height - 1, int(np.floor(max(y0, y1, y2))))
        if xmin > xmax or ymin > ymax:
            continue
        fy, fx = np.mgrid[ymin : ymax + 1, xmin : xmax + 1].astype(np.float64)
        inside = np.ones(fx.shape, dtype=bool)
        for (px, py), (qx, qy), (ox, oy) in (
            ((x1, y1), (x2, y2), (x0, y0)),
            ((x2, y2), (x0, y0), (x1, y1)),
            ((x0, y0), (x1, y1), (x2, y2)),
        ):
            ax, ay, bx, by, s = _edge_sign_np(px, py, qx, qy, ox, oy)
            e = s * ((bx - ax) * (fy - ay) - (by - ay) * (fx - ax))
            inside &= (e > 0.0) | ((e == 0.0) & (s > 0.0))
        region = out[ymin : ymax + 1, xmin : xmax + 1]
        region[inside] = t


def rasterize_labels(tris: np.ndarray, height: int, width: int, jit: Optional[bool] = None) -> np.ndarray:
    """Label each pixel with the index of the triangle that owns it (-1 for none).

    ``tris`` has shape ``(T, 3, 2)`` holding ``(x, y)`` vertex coordinates.
    """
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    out = np.full((height, width), -1, dtype=np.int32)
    if _pick(jit):
        _rasterize_jit(tris, int(height), int(width), out)
    else:
        _rasterize_np(tris, int(height), int(width), out)
    return out


# ---------------------------------------------------------------------------
# Bilinear sampling / warping


@njit
def _warp_jit(image, labels, inv_affines, out):
    h, w, c = image.shape
    oh, ow = labels.shape
    for py in range(oh):
        for px in range(ow):
            t = labels[py, px]
            if t < 0:
                continue
            sx = inv_affines[t, 0, 0] * px + inv_affines[t, 0, 1] * py + inv_affines[t, 0, 2]
            sy = inv_affines[t, 1, 0] * px + inv_affines[t, 1, 1] * py + inv_affines[t, 1, 2]
            sx = min(max(sx, 0.0), w - 1.0)
            sy = min(max(sy, 0.0), h - 1.0)
            ix = int(np.floor(sx))
            iy = int(np.floor(sy))
            fx = sx - ix
            fy = sy - iy
            jx = min(ix + 1, w - 1)
            jy = min(iy + 1, h - 1)
            for ch in range(c):
                top = (1.0 - fx) * image[iy, ix, ch] + fx * image[iy, jx, ch]
                bot = (1.0 - fx) * image[jy, ix, ch] + fx * image[jy, jx, ch]
                out[py, px, ch] = (1.0 - fy) * top + fy * bot


def bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample an ``(H, W, C)`` image at real coordinates, clamped to the border."""
    h, w = image.shape[:2]
    sx = np.clip(xs, 0.0, w - 1.0)
    sy = np.clip(ys, 0.0, h - 1.0)
    ix = np.floor(sx).astype(np.intp)
    iy = np.floor(sy).astype(np.intp)
    fx = (sx - ix)[:, None]
    fy = (sy - iy)[:, None]
    jx = np.minimum(ix + 1, w - 1)
    jy = np.minimum(iy + 1, h - 1)
    top = (1.0 - fx) * image[iy, ix] + fx * image[iy, jx]
    bot = (1.0 - fx) * image[jy, ix] + fx * image[jy, jx]
    return (1.0 - fy) * top + fy * bot


def _warp_np(image, labels, inv_affines, out):
    ys, xs = np.nonzero(labels >= 0)
    a = inv_affines[labels[ys, xs]]
    fx = xs.astype(np.float64)
    fy = ys.astype(np.float64)
    sx = a[:, 0, 0] * fx + a[:, 0, 1] * fy + a[:, 0, 2]
    sy = a[:, 1, 0] * fx + a[:, 1, 1] * fy + a[:, 1, 2]
    out[ys, xs] = bilinear_sample(image, sx, sy)


def warp_by_labels(image: np.ndarray, labels: np.ndarray, inv_affines: np.ndarray, jit: Optional[bool] = None) -> np.ndarray:
    """Pull pixels from ``image`` into the geometry described by ``labels``.

    Pixel ``(x, y)`` with label ``t`` is sampled from ``image`` at
    ``inv_affines[t] @ (x, y, 1)``. Unlabelled pixels are left at zero.
    """
    image = np.ascontiguousarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    out = np.zeros(labels.shape + (image.shape[2],), dtype=np.float64)
    inv_affines = np.ascontiguousarray(inv_affines, dtype=np.float64)
    if _pick(jit):
        _warp_jit(image, np.ascontiguousarray(labels, dtype=np.int32), inv_affines, out)
    else:
        _warp_np(image, labels, inv_affines, out)
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# 5-tap separable filtering with reflect (mirror about the edge sample) borders


@njit
def _reflect_index(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - i
    return i


@njit
def _filter5_jit(image, taps, out):
    h, w, c = image.shape
    ry = np.empty(h + 4, dtype=np.int64)
    for i in range(h + 4):
        ry[i] = _reflect_index(i - 2, h)
    rx = np.empty(w + 4, dtype=np.int64)
    for i in range(w + 4):
        rx[i] = _reflect_index(i - 2, w)
    tmp = np.empty_like(image)
    for y in range(h):
        r0, r1, r2, r3, r4 = ry[y], ry[y + 1], ry[y + 2], ry[y + 3], ry[y + 4]
        for x in range(w):
            for ch in range(c):
                tmp[y, x, ch] = (
                    taps[0] * image[r0, x, ch]
                    + taps[1] * image[r1, x, ch]
                    + taps[2] * image[r2, x, ch]
                    + taps[3] * image[r3, x, ch]
                    + taps[4] * image[r4, x, ch]
                )
    for y in range(h):
        for x in range(w):
            c0, c1, c2, c3, c4 = rx[x], rx[x + 1], rx[x + 2], rx[x + 3], rx[x + 4]
            for ch in range(c):
                out[y, x, ch] = (
                    taps[0] * tmp[y, c0, ch]
                    + taps[1] * tmp[y, c1, ch]
                    + taps[2] * tmp[y, c2, ch]
                    + taps[3] * tmp[y, c3, ch]
                    + taps[4] * tmp[y, c4, ch]
                )


def _reflect_indices(n: int) -> np.ndarray:
    i = np.arange(-2, n + 2)
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.mod(i, period)
    return np.where(i >= n, period - i, i)


def _filter5_np(image, taps, out):
    h, w = image.shape[:2]
    ri = _reflect_indices(h)
    padded = image[ri]
    tmp = taps[0] * padded[0:h]
    for k in range(1, 5):
        tmp = tmp + taps[k] * padded[k : k + h]
    ci = _reflect_indices(w)
    padded = tmp[:, ci]
    acc = taps[0] * padded[:, 0:w]
    for k in range(1, 5):
        acc = acc + taps[k] * padded[:, k : k + w]
    out[...] = acc


def filter5(image: np.ndarray, taps: np.ndarray, jit: Optional[bool] = None) -> np.ndarray:
    """Separable 5-tap filter along both spatial axes with reflect padding.

    Accepts ``(H, W)`` or ``(H, W, C)`` float arrays.
    """
    image = np.ascontiguousarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    out = np.empty_like(image)
    if _pick(jit):
        _filter5_jit(image, taps, out)
    else:
        _filter5_np(image, taps, out)
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# Pyramid steps. The numba versions skip outputs that reduce throws away and
# the zero samples expand inserts; dropping exact zero terms from a sum does
# not change it, so results match the definitional numpy versions bit for bit.


@njit
def _reduce2_jit(image, taps, out):
    h, w, c = image.shape
    oh, ow = h // 2, w // 2
    tmp = np.empty((oh, w, c))
    for oy in range(oh):
        y = 2 * oy
        r0 = _reflect_index(y - 2, h)
        r1 = _reflect_index(y - 1, h)
        r3 = _reflect_index(y + 1, h)
        r4 = _reflect_index(y + 2, h)
        for x in range(w):
            for ch in range(c):
                tmp[oy, x, ch] = (
                    taps[0] * image[r0, x, ch]
                    + taps[1] * image[r1, x, ch]
                    + taps[2] * image[y, x, ch]
                    + taps[3] * image[r3, x, ch]
                    + taps[4] * image[r4, x, ch]
                )
    for oy in range(oh):
        for ox in range(ow):
            x = 2 * ox
            c0 = _reflect_index(x - 2, w)
            c1 = _reflect_index(x - 1, w)
            c3 = _reflect_index(x + 1, w)
            c4 = _reflect_index(x + 2, w)
            for ch in range(c):
                out[oy, ox, ch] = (
                    taps[0] * tmp[oy, c0, ch]
                    + taps[1] * tmp[oy, c1, ch]
                    + taps[2] * tmp[oy, x, ch]
                    + taps[3] * tmp[oy, c3, ch]
                    + taps[4] * tmp[oy, c4, ch]
                )


@njit
def _expand2_jit(image, taps, out):
    h, w, c = image.shape
    uh, uw = 2 * h, 2 * w
    # Mirroring about the edge sample keeps parity, so an even output reads
    # taps 0, 2, 4 and an odd output taps 1, 3 of the non-zero samples.
    tmp = np.empty((uh, w, c))
    for y in range(uh):
        if y % 2 == 0:
            a0 = _reflect_index(y - 2, uh) // 2
            a1 = y // 2
            a2 = _reflect_index(y + 2, uh) // 2
            for x in range(w):
                for ch in range(c):
                    tmp[y, x, ch] = taps[0] * image[a0, x, ch] + taps[2] * image[a1, x, ch] + taps[4] * image[a2, x, ch]
        else:
            a0 = _reflect_index(y - 1, uh) // 2
            a1 = _reflect_index(y + 1, uh) // 2
            for x in range(w):
                for ch in range(c):
                    tmp[y, x, ch] = taps[1] * image[a0, x, ch] + taps[3] * image[a1, x, ch]
    for y in range(uh):
        for x in range(uw):
            if x % 2 == 0:
                b0 = _reflect_index(x - 2, uw) // 2
                b1 = x // 2
                b2 = _reflect_index(x + 2, uw) // 2
                for ch in range(c):
                    out[y, x, ch] = taps[0] * tmp[y, b0, ch] + taps[2] * tmp[y, b1, ch] + taps[4] * tmp[y, b2, ch]
            else:
                b0 = _reflect_index(x - 1, uw) // 2
                b1 = _reflect_index(x + 1, uw) // 2
                for ch in range(c):
                    out[y, x, ch] = taps[1] * tmp[y, b0, ch] + taps[3] * tmp[y, b1, ch]


def _reduce2_np(image, taps):
    h, w = image.shape[:2]
    rows = _reflect_indices(h)[np.arange(0, h, 2)[:, None] + np.arange(5)]
    tmp = taps[0] * image[rows[:, 0]]
    for k in range(1, 5):
        tmp = tmp + taps[k] * image[rows[:, k]]
    cols = _reflect_indices(w)[np.arange(0, w, 2)[:, None] + np.arange(5)]
    out = taps[0] * tmp[:, cols[:, 0]]
    for k in range(1, 5):
        out = out + taps[k] * tmp[:, cols[:, k]]
    return out


def _upsample_axis(image, taps, axis):
    n = image.shape[axis]
    ri = _reflect_indices(2 * n)
    even = np.arange(0, 2 * n, 2)
    odd = even + 1

    def take(pos):
        return np.take(image, ri[pos] // 2, axis=axis)

    shape = list(image.shape)
    shape[axis] = 2 * n
    out = np.empty(shape)
    sl = [slice(None)] * image.ndim
    sl[axis] = slice(0, None, 2)
    out[tuple(sl)] = taps[0] * take(even) + taps[2] * take(even + 2) + taps[4] * take(even + 4)
    sl[axis] = slice(1, None, 2)
    out[tuple(sl)] = taps[1] * take(odd + 1) + taps[3] * take(odd + 3)
    return out


def reduce2_reference(image: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Definition of :func:`reduce2`: full filter, then every other sample."""
    return filter5(image, taps, jit=False)[::2, ::2]


def expand2_reference(image: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Definition of :func:`expand2`: zero insertion, then the full filter."""
    image = np.asarray(image, dtype=np.float64)
    up = np.zeros((2 * image.shape[0], 2 * image.shape[1]) + image.shape[2:])
    up[::2, ::2] = image
    return filter5(up, taps, jit=False)


def reduce2(image: np.ndarray, taps: np.ndarray, jit: Optional[bool] = None) -> np.ndarray:
    """``filter5(image, taps)[::2, ::2]``, computing only the kept samples."""
    image = np.ascontiguousarray(image, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    if not _pick(jit):
        return _reduce2_np(image, taps)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    out = np.empty((image.shape[0] // 2, image.shape[1] // 2, image.shape[2]))
    _reduce2_jit(image, taps, out)
    return out[:, :, 0] if squeeze else out


def expand2(image: np.ndarray, taps: np.ndarray, jit: Optional[bool] = None) -> np.ndarray:
    """Zero-insert to double size, then ``filter5`` with ``taps``, skipping the zero terms."""
    image = np.ascontiguousarray(image, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    if not _pick(jit):
        return _upsample_axis(_upsample_axis(image, taps, 0), taps, 1)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    out = np.empty((2 * image.shape[0], 2 * image.shape[1], image.shape[2]))
    _expand2_jit(image, taps, out)
    return out[:, :, 0] if squeeze else out
