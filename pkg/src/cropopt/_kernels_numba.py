"""Compiled inner loops: crop sampling, resizing, separable blur.

These are the hot paths of the whole package; everything else is thin numpy
around them. The pure-numpy twin lives in _kernels_numpy and must compute the
same expressions in the same per-element order. Compiled without fastmath so
results stay reproducible.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def sample_crop(level, x, y, s, weight, out, jac, want_jac):
    """Accumulate a bilinear crop sample of one pyramid level.

    The output grid point (i, j) carries the normalized offset
    u = (j - (n-1)/2) / ((n-1)/2) in [-1, 1] (same for v along rows), and reads
    the level at source coordinates

        px = (x + 1) * (w-1)/2 + s * u * (w-1)/2
        py = (y + 1) * (h-1)/2 + s * v * (h-1)/2

    with bilinear interpolation, clamp-to-edge, and the right-sided subgradient
    at integer coordinates (floor-based cell choice). Adds weight * value into
    ``out`` and, when want_jac is set, weight * d(value)/d(x, y, s) into
    ``jac`` so multi-level averages can accumulate in place. Coordinates that
    fall outside [0, w-1] x [0, h-1] still sample the clamped edge value but
    contribute zero gradient.
    """
    h, w, c = level.shape
    n = out.shape[0]
    half_out = 0.5 * (n - 1.0)
    half_w = 0.5 * (w - 1.0)
    half_h = 0.5 * (h - 1.0)
    rx = half_w / half_out
    ry = half_h / half_out
    base_x = (x + 1.0) * half_w
    base_y = (y + 1.0) * half_h

    ua = np.empty(n, dtype=np.float64)
    x0a = np.empty(n, dtype=np.int64)
    x1a = np.empty(n, dtype=np.int64)
    wxa = np.empty(n, dtype=np.float64)
    mxa = np.empty(n, dtype=np.float64)
    for j in range(n):
        off = j - half_out
        ua[j] = off / half_out
        px = base_x + s * off * rx
        mxa[j] = 1.0 if (px >= 0.0 and px <= w - 1.0) else 0.0
        if px < 0.0:
            px = 0.0
        elif px > w - 1.0:
            px = w - 1.0
        x0 = int(np.floor(px))
        x1 = x0 + 1
        if x1 > w - 1:
            x1 = w - 1
        x0a[j] = x0
        x1a[j] = x1
        wxa[j] = px - x0

    for i in range(n):
        off = i - half_out
        v = off / half_out
        py = base_y + s * off * ry
        my = 1.0 if (py >= 0.0 and py <= h - 1.0) else 0.0
        if py < 0.0:
            py = 0.0
        elif py > h - 1.0:
            py = h - 1.0
        y0 = int(np.floor(py))
        y1 = y0 + 1
        if y1 > h - 1:
            y1 = h - 1
        wy = py - y0
        for j in range(n):
            x0 = x0a[j]
            x1 = x1a[j]
            wx = wxa[j]
            for k in range(c):
                a = level[y0, x0, k]
                b = level[y0, x1, k]
                cc = level[y1, x0, k]
                d = level[y1, x1, k]
                top = a + wx * (b - a)
                bot = cc + wx * (d - cc)
                out[i, j, k] += weight * (top + wy * (bot - top))
                if want_jac:
                    dpx = mxa[j] * ((1.0 - wy) * (b - a) + wy * (d - cc))
                    dpy = my * (bot - top)
                    gx = dpx * half_w
                    gy = dpy * half_h
                    jac[i, j, k, 0] += weight * gx
                    jac[i, j, k, 1] += weight * gy
                    jac[i, j, k, 2] += weight * (gx * ua[j] + gy * v)


@nb.njit(cache=True)
def resize_bilinear(src, out):
    """Bilinear resize with the corner-aligned grid (corners map to corners)."""
    h, w, c = src.shape
    h2, w2, _ = out.shape
    sx = (w - 1.0) / (w2 - 1.0)
    sy = (h - 1.0) / (h2 - 1.0)
    x0a = np.empty(w2, dtype=np.int64)
    x1a = np.empty(w2, dtype=np.int64)
    wxa = np.empty(w2, dtype=np.float64)
    for j in range(w2):
        px = j * sx
        if px > w - 1.0:
            px = w - 1.0
        x0 = int(np.floor(px))
        x1 = x0 + 1
        if x1 > w - 1:
            x1 = w - 1
        x0a[j] = x0
        x1a[j] = x1
        wxa[j] = px - x0
    for i in range(h2):
        py = i * sy
        if py > h - 1.0:
            py = h - 1.0
        y0 = int(np.floor(py))
        y1 = y0 + 1
        if y1 > h - 1:
            y1 = h - 1
        wy = py - y0
        for j in range(w2):
            x0 = x0a[j]
            x1 = x1a[j]
            wx = wxa[j]
            for k in range(c):
                a = src[y0, x0, k]
                b = src[y0, x1, k]
                cc = src[y1, x0, k]
                d = src[y1, x1, k]
                top = a + wx * (b - a)
                bot = cc + wx * (d - cc)
                out[i, j, k] = top + wy * (bot - top)


@nb.njit(cache=True)
def blur_axis0(src, kern, out):
    """Correlate along rows (axis 0) with clamp-to-edge boundary handling."""
    h, w, c = src.shape
    m = kern.shape[0]
    r = (m - 1) // 2
    for i in range(h):
        for j in range(w):
            for k in range(c):
                acc = 0.0
                for t in range(m):
                    ii = i + t - r
                    if ii < 0:
                        ii = 0
                    elif ii > h - 1:
                        ii = h - 1
                    acc += kern[t] * src[ii, j, k]
                out[i, j, k] = acc


@nb.njit(cache=True)
def blur_axis1(src, kern, out):
    """Correlate along columns (axis 1) with clamp-to-edge boundary handling."""
    h, w, c = src.shape
    m = kern.shape[0]
    r = (m - 1) // 2
    for i in range(h):
        for j in range(w):
            for k in range(c):
                acc = 0.0
                for t in range(m):
                    jj = j + t - r
                    if jj < 0:
                        jj = 0
                    elif jj > w - 1:
                        jj = w - 1
                    acc += kern[t] * src[i, jj, k]
                out[i, j, k] = acc
