"""Raster containers and resampling primitives shared by the pipeline.

Conventions used everywhere in the package:

* images are ``(H, W, 3)`` float64 arrays with values in ``[0, 1]``;
* feature grids are ``(rows, cols, dim)`` float64 arrays, row-major;
* bilinear resampling uses half-pixel centres without corner alignment.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .fileio import atomic_write_bytes


class RasterError(ValueError):
    """Invalid raster shape, value range or dimensions."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageRaster:
    """An RGB image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise RasterError(f"image must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise RasterError("image must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise RasterError("image contains NaN or Inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise RasterError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def check_divisible(self, patch_size: int) -> None:
        """Require H and W divisible by ``patch_size * 8`` (four stages)."""
        unit = patch_size * 8
        if self.height % unit or self.width % unit:
            raise RasterError(
                f"image {self.height}x{self.width} not divisible by {unit} "
                f"(patch size {patch_size} x 8)"
            )


@dataclass(frozen=True)
class FeatureGrid:
    """A ``rows x cols`` grid of ``dim``-channel tokens."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim != 3:
            raise RasterError(f"feature grid must be rows x cols x dim, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RasterError("feature grid contains NaN or Inf")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def channel(self, k: int) -> np.ndarray:
        return self.data[:, :, k]


@dataclass(frozen=True)
class ActivationMap:
    """Per-pixel evidence in [0, 1] at input resolution."""

    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim != 2:
            raise RasterError(f"activation map must be 2-D, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RasterError("activation map contains NaN or Inf")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise RasterError("activation map values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(src: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Resample a 2-D map (or an ``(H, W, K)`` stack) to ``target_h x target_w``.

    Every output value is a convex combination of at most four source
    values, so the output range never exceeds the input range.
    """
    arr = np.asarray(src, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise RasterError(f"expected a 2-D map or an HxWxK stack, got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise RasterError("source map must be non-empty")
    if target_h < 1 or target_w < 1:
        raise RasterError(f"target size must be positive, got {target_h}x{target_w}")

    r0, r1, fr = _axis_weights(arr.shape[0], target_h)
    c0, c1, fc = _axis_weights(arr.shape[1], target_w)
    if arr.ndim == 3:
        fr = fr[:, None, None]
        fc = fc[None, :, None]
    else:
        fr = fr[:, None]
        fc = fc[None, :]

    top = arr[r0][:, c0] * (1.0 - fc) + arr[r0][:, c1] * fc
    bottom = arr[r1][:, c0] * (1.0 - fc) + arr[r1][:, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Map values affinely onto [0, 1]; a constant input maps to all zeros."""
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise RasterError("cannot normalize a map containing NaN or Inf")
    if arr.size == 0:
        return arr.copy()
    lo = arr.min()
    span = arr.max() - lo
    if span == 0.0:
        return np.zeros_like(arr)
    out = (arr - lo) / span
    # guard the last ulp so the result always satisfies the [0, 1] contract
    return np.clip(out, 0.0, 1.0)


def load_image(path: str | Path) -> ImageRaster:
    """Read an 8-bit RGB PNG and scale it to [0, 1] by v/255."""
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    return ImageRaster(rgb / 255.0)


def write_png(img: Image.Image, path: str | Path) -> None:
    """Encode in memory, then replace ``path`` atomically."""
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_image(image: ImageRaster | np.ndarray, path: str | Path) -> None:
    data = image.data if isinstance(image, ImageRaster) else np.asarray(image)
    pixels = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    write_png(Image.fromarray(pixels, mode="RGB"), path)


def save_activation_png(amap: ActivationMap | np.ndarray, path: str | Path) -> None:
    """Write an activation map as 8-bit grayscale via round(v * 255)."""
    data = amap.data if isinstance(amap, ActivationMap) else np.asarray(amap)
    pixels = np.round(data * 255.0).astype(np.uint8)
    write_png(Image.fromarray(pixels, mode="L"), path)
