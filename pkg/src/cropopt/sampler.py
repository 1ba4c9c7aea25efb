"""Differentiable crop sampling.

A crop is parameterized by theta = (x, y, s): the center of a square window in
normalized coordinates [-1, 1]^2 and its side as a fraction s in (0, 1] of the
source extent. Sampling resamples that window onto a fixed n x n grid with
bilinear interpolation, which makes the resampled pixels piecewise-smooth in
theta; the jacobian d(pixel)/d(theta) comes out alongside the pixels so losses
on the resampled crop can be pulled back to theta with one tensor contraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateSizeError
from .imagecore import Image, Pyramid

_BOUND_SLACK = 1e-9

# Test hook: multiplies the jacobian right before it is returned. The gradient
# checker's negative control sets this to prove it can detect a wrong jacobian.
_jacobian_corruption = 1.0


def _set_jacobian_corruption(scale: float) -> None:
    global _jacobian_corruption
    _jacobian_corruption = float(scale)


@dataclass(frozen=True)
class CropParams:
    """Square crop window: center (x, y) in [-1, 1]^2, side fraction s.

    The constructor checks s in (0, 1] and finiteness. The center may sit
    outside the feasible box |x|, |y| <= 1 - s here, because clip_params takes
    an unclipped CropParams and returns the clipped one; the samplers are the
    components that insist on clipped input.
    """

    x: float
    y: float
    s: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)
                and math.isfinite(self.s)):
            raise ValueError(f"crop parameters must be finite, got {self}")
        if not (0.0 < self.s <= 1.0):
            raise ValueError(f"crop scale must be in (0, 1], got {self.s}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.s], dtype=np.float64)


def clip_params(theta: CropParams) -> CropParams:
    """Clamp the center into the feasible box so the window stays inside."""
    bound = 1.0 - theta.s
    return CropParams(
        x=min(max(theta.x, -bound), bound),
        y=min(max(theta.y, -bound), bound),
        s=theta.s,
    )


def _check_inside(theta: CropParams) -> None:
    bound = 1.0 - theta.s + _BOUND_SLACK
    if abs(theta.x) > bound or abs(theta.y) > bound:
        raise ValueError(
            f"crop window leaves the image: {theta} (|center| must be <= {1.0 - theta.s});"
            " pass the parameters through clip_params first")


def theta_to_pixel_box(theta: CropParams, width: int, height: int):
    """Integer pixel box (left, top, right, bottom) of the crop window.

    Right/bottom are exclusive, so width = right - left. Edges are rounded to
    the nearest pixel and clamped to the image.
    """
    left = int(round((theta.x - theta.s + 1.0) * width / 2.0))
    right = int(round((theta.x + theta.s + 1.0) * width / 2.0))
    top = int(round((theta.y - theta.s + 1.0) * height / 2.0))
    bottom = int(round((theta.y + theta.s + 1.0) * height / 2.0))
    left = max(0, min(left, width))
    right = max(0, min(right, width))
    top = max(0, min(top, height))
    bottom = max(0, min(bottom, height))
    return left, top, right, bottom


def box_iou(box_a, box_b) -> float:
    """Intersection over union of two (left, top, right, bottom) boxes."""
    ax0, ay0, ax1, ay1 = box_a
    bx0, by0, bx1, by1 = box_b
    iw = max(0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    area_a = max(0, ax1 - ax0) * max(0, ay1 - ay0)
    area_b = max(0, bx1 - bx0) * max(0, by1 - by0)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return inter / union


def lattice_clearance(pyramid: Pyramid, theta: CropParams, out_size: int) -> float:
    """Distance from theta to the nearest bilinear-cell boundary, in theta units.

    The resampled pixels are piecewise-bilinear in theta: crossing an integer
    source coordinate (or the clamp boundary) switches interpolation cells and
    kinks the derivative. Finite-difference validation needs probe windows
    that stay inside one cell; this reports how far (in x/y units,
    conservatively also valid for s) the nearest such kink is, minimized over
    every grid coordinate of every pyramid level.
    """
    half_out = 0.5 * (out_size - 1.0)
    off = np.arange(out_size, dtype=np.float64) - half_out
    best = math.inf
    for level in pyramid.levels:
        for size, center in ((level.image.width, theta.x),
                             (level.image.height, theta.y)):
            half = 0.5 * (size - 1.0)
            p = (center + 1.0) * half + theta.s * off * (half / half_out)
            interior = np.abs(p - np.round(p))
            below = -p
            above = p - (size - 1.0)
            d = np.where(p < 0.0, below, np.where(p > size - 1.0, above, interior))
            best = min(best, float(d.min()) / half)
    return best


@dataclass(frozen=True)
class CropResult:
    """Resampled crop pixels plus, when requested, d(pixel)/d(x, y, s).

    jacobian has shape (n, n, channels, 3) matching the image, or is None when
    sampling ran in values-only mode (the loss stage then reports that no
    parameter gradient is available).
    """

    image: Image
    jacobian: np.ndarray | None


def bilinear_sample(img: Image, theta: CropParams, out_size: int,
                    with_jacobian: bool = True) -> CropResult:
    """Sample one image (a single pyramid level) at the crop window.

    out_size must be at least 2; theta must already be clipped. Source pixels
    are read with clamp-to-edge, and grid points whose source coordinate falls
    outside the image contribute zero gradient (the clamped value is constant
    there).
    """
    if out_size < 2:
        raise DegenerateSizeError(f"crop output size must be >= 2, got {out_size}")
    _check_inside(theta)
    n = int(out_size)
    c = img.channels
    out = np.zeros((n, n, c), dtype=np.float64)
    jac = np.zeros((n, n, c, 3), dtype=np.float64) if with_jacobian else _NO_JAC
    _kernels.sample_crop(img.data, theta.x, theta.y, theta.s, 1.0,
                         out, jac, with_jacobian)
    return _finish(out, jac, with_jacobian)


def multiscale_crop(pyramid: Pyramid, theta: CropParams, out_size: int,
                    with_jacobian: bool = True) -> CropResult:
    """Average the crop sample over every pyramid level.

    Both the pixels and the jacobian are plain means across levels, so coarse
    levels smooth the objective while the finest level keeps detail.
    """
    if out_size < 2:
        raise DegenerateSizeError(f"crop output size must be >= 2, got {out_size}")
    if len(pyramid) == 0:
        raise ValueError("pyramid has no levels")
    _check_inside(theta)
    n = int(out_size)
    c = pyramid.levels[0].image.channels
    out = np.zeros((n, n, c), dtype=np.float64)
    jac = np.zeros((n, n, c, 3), dtype=np.float64) if with_jacobian else _NO_JAC
    weight = 1.0 / len(pyramid)
    for level in pyramid.levels:
        _kernels.sample_crop(level.image.data, theta.x, theta.y, theta.s,
                             weight, out, jac, with_jacobian)
    return _finish(out, jac, with_jacobian)


# Dummy jacobian buffer for values-only sampling; the kernels never touch it
# when want_jac is false, but numba needs a real array of the right rank.
_NO_JAC = np.zeros((1, 1, 1, 3), dtype=np.float64)


def _finish(out: np.ndarray, jac: np.ndarray, with_jacobian: bool) -> CropResult:
    if not with_jacobian:
        return CropResult(image=Image(out), jacobian=None)
    if _jacobian_corruption != 1.0:
        jac = jac * _jacobian_corruption
    jac.setflags(write=False)
    return CropResult(image=Image(out), jacobian=jac)
