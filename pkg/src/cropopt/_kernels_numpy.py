"""Pure-numpy fallback for the compiled kernels.

Same signatures and same per-element arithmetic as _kernels_numba, expressed
with vectorized numpy. Selected via CROPOPT_KERNELS=numpy or automatically
when numba is not importable.
"""

from __future__ import annotations

import numpy as np


def _axis_tables(n, half_out, base, s, ratio, limit):
    """Per-index source coordinate, in-range mask, cell indices and weight."""
    off = np.arange(n, dtype=np.float64) - half_out
    p = base + s * off * ratio
    mask = ((p >= 0.0) & (p <= limit)).astype(np.float64)
    p = np.clip(p, 0.0, limit)
    i0 = np.floor(p).astype(np.int64)
    i1 = np.minimum(i0 + 1, int(limit))
    wgt = p - i0
    return off / half_out, mask, i0, i1, wgt


def sample_crop(level, x, y, s, weight, out, jac, want_jac):
    h, w, c = level.shape
    n = out.shape[0]
    half_out = 0.5 * (n - 1.0)
    half_w = 0.5 * (w - 1.0)
    half_h = 0.5 * (h - 1.0)
    ux, mx, x0, x1, wx = _axis_tables(
        n, half_out, (x + 1.0) * half_w, s, half_w / half_out, w - 1.0)
    uy, my, y0, y1, wy = _axis_tables(
        n, half_out, (y + 1.0) * half_h, s, half_h / half_out, h - 1.0)

    a = level[y0[:, None], x0[None, :]]
    b = level[y0[:, None], x1[None, :]]
    cc = level[y1[:, None], x0[None, :]]
    d = level[y1[:, None], x1[None, :]]
    wxc = wx[None, :, None]
    wyc = wy[:, None, None]
    top = a + wxc * (b - a)
    bot = cc + wxc * (d - cc)
    out += weight * (top + wyc * (bot - top))
    if want_jac:
        dpx = mx[None, :, None] * ((1.0 - wyc) * (b - a) + wyc * (d - cc))
        dpy = my[:, None, None] * (bot - top)
        gx = dpx * half_w
        gy = dpy * half_h
        jac[..., 0] += weight * gx
        jac[..., 1] += weight * gy
        jac[..., 2] += weight * (gx * ux[None, :, None] + gy * uy[:, None, None])


def resize_bilinear(src, out):
    h, w, c = src.shape
    h2, w2, _ = out.shape

    def table(n2, size):
        p = np.minimum(np.arange(n2, dtype=np.float64) * ((size - 1.0) / (n2 - 1.0)),
                       size - 1.0)
        i0 = np.floor(p).astype(np.int64)
        i1 = np.minimum(i0 + 1, size - 1)
        return i0, i1, p - i0

    x0, x1, wx = table(w2, w)
    y0, y1, wy = table(h2, h)
    a = src[y0[:, None], x0[None, :]]
    b = src[y0[:, None], x1[None, :]]
    cc = src[y1[:, None], x0[None, :]]
    d = src[y1[:, None], x1[None, :]]
    wxc = wx[None, :, None]
    wyc = wy[:, None, None]
    top = a + wxc * (b - a)
    bot = cc + wxc * (d - cc)
    out[...] = top + wyc * (bot - top)


def blur_axis0(src, kern, out):
    h = src.shape[0]
    m = kern.shape[0]
    r = (m - 1) // 2
    idx = np.arange(h)
    out[...] = 0.0
    for t in range(m):
        rows = np.clip(idx + t - r, 0, h - 1)
        out += kern[t] * src[rows]


def blur_axis1(src, kern, out):
    w = src.shape[1]
    m = kern.shape[0]
    r = (m - 1) // 2
    idx = np.arange(w)
    out[...] = 0.0
    for t in range(m):
        cols = np.clip(idx + t - r, 0, w - 1)
        out += kern[t] * src[:, cols]
