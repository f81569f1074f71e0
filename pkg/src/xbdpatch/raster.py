"""RGBA rasters, square crop windows and the empty-pixel ratio."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError

# A pixel is black when every RGB channel is at or below this value.
BLACK_LEVEL = 10

_EIGHT_BIT_MODES = {"1", "L", "P", "RGB", "RGBA", "LA", "PA", "CMYK", "YCbCr", "La", "RGBa", "RGBX"}


@dataclass(frozen=True)
class RgbaRaster:
    """Read-only ``(height, width, 4)`` uint8 pixel array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8 or px.ndim != 3 or px.shape[2] != 4:
            raise ValueError(f"expected (H, W, 4) uint8, got {px.dtype} {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("raster must be at least 1x1")
        if px.flags.writeable:
            px = px.copy()
            px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self):
        return self.width, self.height

    @classmethod
    def from_rgb(cls, rgb: np.ndarray, alpha: int = 255) -> "RgbaRaster":
        rgb = np.asarray(rgb, dtype=np.uint8)
        out = np.empty(rgb.shape[:2] + (4,), dtype=np.uint8)
        out[..., :3] = rgb
        out[..., 3] = alpha
        return cls(out)

    def rgb(self) -> np.ndarray:
        return self.pixels[..., :3]


@dataclass(frozen=True)
class CropWindow:
    x1: int
    y1: int
    size: int

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("window size must be positive")

    def as_tuple(self):
        return self.x1, self.y1, self.size


def load_image(path) -> RgbaRaster:
    """Decode an 8-bit image and attach a fully opaque alpha plane.

    Any alpha the file carries is discarded. 16-bit and float sources are
    rejected rather than rescaled.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in _EIGHT_BIT_MODES:
                raise DecodeError(f"{path}: unsupported pixel mode {im.mode} (8-bit channels only)")
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise DecodeError(f"{path}: {exc}") from None
    return RgbaRaster.from_rgb(rgb)


def crop(raster: RgbaRaster, window: CropWindow) -> RgbaRaster:
    """Cut a ``size x size`` patch; parts outside the source are transparent black."""
    s = window.size
    out = np.zeros((s, s, 4), dtype=np.uint8)
    h, w = raster.height, raster.width
    sx0, sy0 = max(window.x1, 0), max(window.y1, 0)
    sx1, sy1 = min(window.x1 + s, w), min(window.y1 + s, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - window.y1:sy1 - window.y1, sx0 - window.x1:sx1 - window.x1] = \
            raster.pixels[sy0:sy1, sx0:sx1]
    return RgbaRaster(out)


def empty_mask(pixels: np.ndarray) -> np.ndarray:
    black = np.all(pixels[..., :3] <= BLACK_LEVEL, axis=-1)
    return black | (pixels[..., 3] == 0)


def empty_count(patch: RgbaRaster) -> int:
    return int(np.count_nonzero(empty_mask(patch.pixels)))


def empty_ratio(patch: RgbaRaster) -> float:
    if patch.width != patch.height:
        raise ValueError("empty_ratio expects a square patch")
    return empty_count(patch) / (patch.width * patch.height)


class EmptyIndex:
    """Summed-area table of empty pixels for O(1) window ratios.

    Pixels outside the raster count as empty, matching what :func:`crop`
    fills them with.
    """

    def __init__(self, raster: RgbaRaster):
        filled = (~empty_mask(raster.pixels)).astype(np.int64)
        self.height, self.width = filled.shape
        self._sat = np.zeros((self.height + 1, self.width + 1), dtype=np.int64)
        self._sat[1:, 1:] = filled.cumsum(0).cumsum(1)

    def _filled(self, x0, y0, x1, y1):
        x0 = np.clip(x0, 0, self.width)
        x1 = np.clip(x1, 0, self.width)
        y0 = np.clip(y0, 0, self.height)
        y1 = np.clip(y1, 0, self.height)
        t = self._sat
        return t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0]

    def empty_count(self, window: CropWindow) -> int:
        s = window.size
        filled = self._filled(window.x1, window.y1, window.x1 + s, window.y1 + s)
        return s * s - int(filled)

    def ratio(self, window: CropWindow) -> float:
        return self.empty_count(window) / (window.size * window.size)

    def counts_grid(self, xs: np.ndarray, ys: np.ndarray, size: int) -> np.ndarray:
        """Empty counts for every window origin in ``ys x xs``; shape (len(ys), len(xs))."""
        X, Y = np.meshgrid(np.asarray(xs), np.asarray(ys))
        return size * size - self._filled(X, Y, X + size, Y + size)
