"""Image container, file I/O, resizing, blurring, and pyramid construction.

All pixel data lives in float64 arrays shaped (height, width, channels) with
values in [0, 1], channels either 1 (gray) or 3 (RGB). PNG goes through
Pillow; the binary netpbm formats (P5/P6, maxval 255) are parsed directly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DegenerateSizeError, ImageFormatError

_RANGE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable float image.

    Construction normalizes the layout (adds a channel axis to 2-d input,
    forces float64 C-contiguous storage), validates that values sit in
    [0, 1] up to 1e-9 of roundoff slack, clips that slack away exactly, and
    freezes the buffer against writes.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"image array must be 2-d or 3-d, got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ValueError(f"image must have 1 or 3 channels, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image dimensions must be positive, got {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        lo = float(arr.min())
        hi = float(arr.max())
        if lo < -_RANGE_SLACK or hi > 1.0 + _RANGE_SLACK:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
        if lo < 0.0 or hi > 1.0:
            arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_array(cls, arr) -> "Image":
        return cls(np.asarray(arr, dtype=np.float64))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _parse_netpbm(raw: bytes, path) -> Image:
    magic = raw[:2]
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, then a single whitespace byte before the raster.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tok = raw[start:pos]
        if not re.fullmatch(rb"\d+", tok):
            raise ImageFormatError(f"{path}: malformed netpbm header token {tok!r}")
        fields.append(int(tok))
    pos += 1  # the single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    raster = raw[pos:pos + need]
    if len(raster) < need:
        raise ImageFormatError(f"{path}: truncated raster "
                               f"({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return Image(arr.astype(np.float64) / 255.0)


def _load_png(raw: bytes, path) -> Image:
    from PIL import Image as PILImage
    import io

    try:
        pil = PILImage.open(io.BytesIO(raw))
        pil.load()
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode PNG: {exc}") from exc
    mode = pil.mode
    if mode in ("I", "I;16", "I;16B", "I;16L", "I;16N"):
        raise ImageFormatError(f"{path}: 16-bit PNG is not supported")
    if mode == "1":
        pil = pil.convert("L")
    elif mode in ("P", "RGBA", "LA", "PA"):
        pil = pil.convert("RGB")
    elif mode not in ("L", "RGB"):
        raise ImageFormatError(f"{path}: unsupported PNG mode {mode!r}")
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    return Image(arr)


def load_image(path) -> Image:
    """Read a PNG, PPM (P6), or PGM (P5) file, sniffing the format by magic bytes.

    Missing or unreadable files raise the usual OSError; recognizable files
    with unsupported or corrupt contents raise ImageFormatError.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(raw, path)
    if raw[:2] in (b"P5", b"P6"):
        return _parse_netpbm(raw, path)
    raise ImageFormatError(f"{path}: not a PNG, PPM (P6), or PGM (P5) file")


def _to_uint8(img: Image) -> np.ndarray:
    return np.clip(np.rint(img.data * 255.0), 0.0, 255.0).astype(np.uint8)


def save_image(img: Image, path) -> None:
    """Write the image; the format follows the file extension (.png/.ppm/.pgm)."""
    path = Path(path)
    suffix = path.suffix.lower()
    data = _to_uint8(img)
    if suffix == ".png":
        from PIL import Image as PILImage

        if img.channels == 1:
            PILImage.fromarray(data[:, :, 0], mode="L").save(path)
        else:
            PILImage.fromarray(data, mode="RGB").save(path)
    elif suffix == ".ppm":
        if img.channels == 1:
            data = np.repeat(data, 3, axis=2)
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + data.tobytes())
    elif suffix == ".pgm":
        if img.channels != 1:
            raise ValueError("PGM output requires a single-channel image; use .ppm")
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + data.tobytes())
    else:
        raise ValueError(f"unsupported output extension {suffix!r}")


def resize(img: Image, factor: float) -> Image:
    """Downscale by a factor in (0, 1]; factor 1 returns the image unchanged.

    Output dimensions are round(factor * dim) (ties to even); anything that
    would drop below 2 pixels on a side raises DegenerateSizeError.
    """
    if not (0.0 < factor <= 1.0):
        raise ValueError(f"resize factor must be in (0, 1], got {factor}")
    if factor == 1.0:
        return img
    h2 = int(round(factor * img.height))
    w2 = int(round(factor * img.width))
    if h2 < 2 or w2 < 2:
        raise DegenerateSizeError(
            f"resize by {factor} would give {h2}x{w2}; need at least 2x2")
    out = np.empty((h2, w2, img.channels), dtype=np.float64)
    _kernels.resize_bilinear(img.data, out)
    return Image(out)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian taps with radius ceil(3*sigma)."""
    radius = math.ceil(3.0 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: Image, sigma: float) -> Image:
    """Separable Gaussian blur with clamp-to-edge borders; sigma 0 is identity."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return img
    kern = gaussian_kernel(sigma)
    tmp = np.empty_like(img.data)
    out = np.empty_like(img.data)
    _kernels.blur_axis0(img.data, kern, tmp)
    _kernels.blur_axis1(tmp, kern, out)
    return Image(out)


@dataclass(frozen=True)
class BlurPolicy:
    """Anti-alias sigma per pyramid level.

    Downscaled levels get coarse_coeff / factor (more blur the coarser the
    level); the full-resolution level keeps base_sigma, default 0 so the
    original pixels pass through untouched.
    """

    base_sigma: float = 0.0
    coarse_coeff: float = 0.5

    def sigma_for(self, factor: float) -> float:
        if factor == 1.0:
            return self.base_sigma
        return self.coarse_coeff / factor


@dataclass(frozen=True)
class PyramidLevel:
    factor: float
    image: Image


@dataclass(frozen=True)
class Pyramid:
    """Smoothed multi-resolution copies of one source image, coarse to fine."""

    levels: tuple[PyramidLevel, ...]

    @property
    def factors(self) -> tuple[float, ...]:
        return tuple(lev.factor for lev in self.levels)

    def __len__(self) -> int:
        return len(self.levels)


def build_pyramid(img: Image, scale_factors, policy: BlurPolicy | None = None) -> Pyramid:
    """Resize then blur the image at each scale factor.

    Factors must be distinct values in (0, 1] and include 1; levels come out
    sorted coarse to fine. Each level is the source resized by its factor and
    then blurred with the policy's sigma for that factor.
    """
    if policy is None:
        policy = BlurPolicy()
    factors = sorted(float(f) for f in scale_factors)
    if not factors:
        raise ValueError("scale set must not be empty")
    for f in factors:
        if not (0.0 < f <= 1.0) or not math.isfinite(f):
            raise ValueError(f"scale factors must be in (0, 1], got {f}")
    if len(set(factors)) != len(factors):
        raise ValueError(f"scale factors must be distinct, got {factors}")
    if factors[-1] != 1.0:
        raise ValueError("scale set must include the factor 1")
    levels = []
    for f in factors:
        level = gaussian_blur(resize(img, f), policy.sigma_for(f))
        levels.append(PyramidLevel(f, level))
    return Pyramid(tuple(levels))
