"""Image rasters, Gaussian kernels/fields, separable blur, resizing and I/O.

Images are float64 numpy arrays of shape ``(H, W, C)`` with values in
``[0, 1]``.  Scalar fields (blend weights, attribution maps) are ``(H, W)``
float64 arrays.  Everything here is a pure function.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


@dataclass(frozen=True)
class GaussianKernel1D:
    taps: np.ndarray

    @property
    def radius(self) -> int:
        return (len(self.taps) - 1) // 2


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel rectangle: columns ``[x, x + w)``, rows ``[y, y + h)``."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bbox must have positive area, got {self}")

    def slices(self, shape):
        """Row/column slices clipped to a grid of ``shape = (H, W)``."""
        h, w = shape[0], shape[1]
        rows = slice(min(max(self.y, 0), h), min(max(self.y + self.h, 0), h))
        cols = slice(min(max(self.x, 0), w), min(max(self.x + self.w, 0), w))
        return rows, cols

    def intersects(self, shape) -> bool:
        rows, cols = self.slices(shape)
        return rows.stop > rows.start and cols.stop > cols.start

    def center(self):
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    def scaled(self, sy: float, sx: float) -> "BBox":
        x0, y0 = round(self.x * sx), round(self.y * sy)
        x1, y1 = round((self.x + self.w) * sx), round((self.y + self.h) * sy)
        return BBox(x0, y0, max(x1 - x0, 1), max(y1 - y0, 1))

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_dict(cls, d) -> "BBox":
        return cls(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


def as_image(data, *, copy: bool = False) -> np.ndarray:
    """Validate and coerce ``data`` into an ``(H, W, C)`` float64 image.

    2-D input is promoted to a single channel.  Values must be finite and
    lie in ``[0, 1]``.
    """
    arr = np.array(data, dtype=np.float64, copy=copy)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"image must be 2-D or 3-D, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1 or c not in (1, 3):
        raise ValueError(f"invalid image shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def make_gaussian_kernel(sigma: float, filter_size: int) -> GaussianKernel1D:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if int(filter_size) != filter_size or filter_size < 1 or filter_size % 2 == 0:
        raise ValueError(f"filter_size must be a positive odd integer, got {filter_size}")
    radius = int(filter_size) // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    # keep far taps strictly positive when exp underflows
    taps = np.maximum(taps, np.finfo(np.float64).tiny)
    return GaussianKernel1D(taps / taps.sum())


def convolve_separable(image: np.ndarray, kernel: GaussianKernel1D) -> np.ndarray:
    """Horizontal then vertical pass with replicate borders, no clamping."""
    img = np.asarray(image, dtype=np.float64)
    out = ndimage.correlate1d(img, kernel.taps, axis=1, mode="nearest")
    return ndimage.correlate1d(out, kernel.taps, axis=0, mode="nearest")


def blur(image: np.ndarray, kernel: GaussianKernel1D) -> np.ndarray:
    img = as_image(image)
    return np.clip(convolve_separable(img, kernel), 0.0, 1.0)


def fixation_to_pixel(u: float, size: int) -> float:
    """Map a normalized coordinate to the (fractional) pixel index grid.

    ``u = 0.5`` lands on the exact grid center; pixel ``i`` corresponds to
    ``u = (i + 0.5) / size``.
    """
    return u * size - 0.5


def pixel_to_fixation(p: float, size: int) -> float:
    return (p + 0.5) / size


def gaussian_blob(center, sigma_px: float, shape) -> np.ndarray:
    """Amplitude-normalized Gaussian bump (peak 1 at ``center``).

    ``center`` is an ``(x, y)`` pair in normalized coordinates (x = column
    direction); ``shape`` is ``(H, W)``.
    """
    if not sigma_px > 0:
        raise ValueError(f"sigma_px must be positive, got {sigma_px}")
    h, w = int(shape[0]), int(shape[1])
    cx = fixation_to_pixel(float(center[0]), w)
    cy = fixation_to_pixel(float(center[1]), h)
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    gy = np.exp(-((np.arange(h) - cy) ** 2) * inv)
    gx = np.exp(-((np.arange(w) - cx) ** 2) * inv)
    return np.outer(gy, gx)


def gaussian_blob_grad(center, sigma_px: float, shape):
    """Blob and its partial derivatives w.r.t. the normalized center.

    Returns ``(blob, d_blob/dx, d_blob/dy)``.
    """
    h, w = int(shape[0]), int(shape[1])
    blob = gaussian_blob(center, sigma_px, shape)
    cx = fixation_to_pixel(float(center[0]), w)
    cy = fixation_to_pixel(float(center[1]), h)
    s2 = sigma_px * sigma_px
    dx = blob * ((np.arange(w) - cx) / s2 * w)[None, :]
    dy = blob * ((np.arange(h) - cy) / s2 * h)[:, None]
    return blob, dx, dy


def min_max_normalize(field: np.ndarray) -> np.ndarray:
    f = np.asarray(field, dtype=np.float64)
    lo, hi = f.min(), f.max()
    if hi == lo:
        return np.zeros_like(f)
    return (f - lo) / (hi - lo)


def resize_bilinear(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    img = as_image(image)
    h, w, _ = img.shape
    if (h, w) == (new_h, new_w):
        return img.copy()

    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, wy = axis_weights(h, new_h)
    x0, x1, wx = axis_weights(w, new_w)
    top = img[y0][:, x0] * (1 - wx)[None, :, None] + img[y0][:, x1] * wx[None, :, None]
    bot = img[y1][:, x0] * (1 - wx)[None, :, None] + img[y1][:, x1] * wx[None, :, None]
    out = top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
    return np.clip(out, 0.0, 1.0)


def to_rgb(image: np.ndarray) -> np.ndarray:
    img = as_image(image)
    return np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img


def to_gray(image: np.ndarray) -> np.ndarray:
    img = as_image(image)
    return img.mean(axis=2, keepdims=True) if img.shape[2] == 3 else img


# -- file I/O ---------------------------------------------------------------


def quantize8(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8-bit."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Load 8-bit PNG or binary PGM/PPM into ``[0, 1]``."""
    with PILImage.open(path) as im:
        if im.mode in ("L", "1", "LA"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)[:, :, None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def _atomic_save(pil_image, path, fmt):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    pil_image.save(tmp, format=fmt)
    os.replace(tmp, path)


def save_image(image: np.ndarray, path) -> None:
    """Save as 8-bit PNG, or PGM/PPM when the suffix asks for it."""
    q = quantize8(as_image(np.clip(image, 0.0, 1.0)))
    pil = PILImage.fromarray(q[:, :, 0] if q.shape[2] == 1 else q)
    suffix = Path(path).suffix.lower()
    fmt = "PPM" if suffix in (".pgm", ".ppm", ".pnm") else "PNG"
    _atomic_save(pil, path, fmt)


def save_field16(field: np.ndarray, path) -> None:
    """Write a [0, 1] field as 16-bit grayscale PNG (``round(v * 65535)``)."""
    q = np.floor(np.clip(field, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    _atomic_save(PILImage.fromarray(q), path, "PNG")


def load_field16(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    return arr / 65535.0
