"""Building-centred patch extraction with randomized re-crops.

For each building the extractor tries the window centred on the rounded
centroid, then up to ``max_attempts - 1`` windows whose centre is shifted by
a random offset of at most ``search_radius`` pixels per axis. The first
window whose empty ratio is at or below ``empty_threshold`` wins; otherwise
the lowest-ratio window seen is emitted with ``fallback_used`` set.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .geom import centroid as ring_centroid
from .labels import BuildingAnnotation, DamageClass
from .raster import CropWindow, EmptyIndex, RgbaRaster, crop, empty_ratio

PATCH_SIZE_PRESETS = {"deit": 224, "dinov2": 518}
OFFSET_SHAPES = ("square", "disk")


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 224
    search_radius: int = 100
    empty_threshold: float = 0.01
    max_attempts: int = 50
    seed: int = 0
    offset_shape: str = "square"
    exhaustive_fallback: bool = False

    def __post_init__(self):
        if self.patch_size <= 0:
            raise ValueError("patch_size must be positive")
        if not 0.0 <= self.empty_threshold <= 1.0:
            raise ValueError("empty_threshold must lie in [0, 1]")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.offset_shape not in OFFSET_SHAPES:
            raise ValueError(f"offset_shape must be one of {OFFSET_SHAPES}")


@dataclass(frozen=True)
class PatchRecord:
    scene_id: str
    building_id: str
    label: DamageClass
    window: CropWindow
    empty_ratio: float
    attempts_used: int
    fallback_used: bool
    pixels: np.ndarray  # (size, size, 3) uint8, alpha already dropped
    padded: bool = False


def round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def building_rng(seed: int, scene_id: str, building_id: str) -> np.random.Generator:
    """Per-building generator; independent of processing order."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, stable_hash(scene_id), stable_hash(building_id)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _clamp_origin(v: int, extent: int, size: int) -> int:
    lo, hi = min(0, extent - size), max(0, extent - size)
    return min(max(v, lo), hi)


def window_at(center: Tuple[int, int], size: int, raster_dims: Tuple[int, int]) -> CropWindow:
    """Window of side ``size`` centred on an integer point, clamped to the raster.

    Rasters smaller than ``size`` end up fully inside the window; the
    remainder is padding.
    """
    w, h = raster_dims
    half = size // 2
    return CropWindow(_clamp_origin(center[0] - half, w, size), _clamp_origin(center[1] - half, h, size), size)


def initial_window(centroid, cfg: PatchConfig, raster_dims) -> CropWindow:
    cx, cy = round_half_away(centroid[0]), round_half_away(centroid[1])
    return window_at((cx, cy), cfg.patch_size, raster_dims)


def draw_offset(rng: np.random.Generator, radius: float, shape: str = "square") -> Tuple[float, float]:
    if shape == "square":
        dx, dy = rng.uniform(-radius, radius, size=2)
    else:
        r = radius * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        dx, dy = r * math.cos(theta), r * math.sin(theta)
    return float(dx), float(dy)


def perturbed_window(centroid, cfg: PatchConfig, raster_dims, rng: np.random.Generator) -> CropWindow:
    dx, dy = draw_offset(rng, cfg.search_radius, cfg.offset_shape)
    cx = round_half_away(centroid[0]) + round_half_away(dx)
    cy = round_half_away(centroid[1]) + round_half_away(dy)
    return window_at((cx, cy), cfg.patch_size, raster_dims)


def candidate_windows(centroid, cfg: PatchConfig, raster_dims, rng) -> Iterator[CropWindow]:
    """The full sequence of windows the extractor may evaluate, in order."""
    yield initial_window(centroid, cfg, raster_dims)
    for _ in range(cfg.max_attempts - 1):
        yield perturbed_window(centroid, cfg, raster_dims, rng)


def exhaustive_best(index: EmptyIndex, centroid, cfg: PatchConfig, raster_dims) -> Tuple[CropWindow, int]:
    """Lowest-empty window over every integer offset in the search square.

    Ties go to the first offset in row-major (dy, dx) order.
    """
    r = cfg.search_radius
    cx, cy = round_half_away(centroid[0]), round_half_away(centroid[1])
    w, h = raster_dims
    half = cfg.patch_size // 2
    xs = np.array([_clamp_origin(cx + d - half, w, cfg.patch_size) for d in range(-r, r + 1)])
    ys = np.array([_clamp_origin(cy + d - half, h, cfg.patch_size) for d in range(-r, r + 1)])
    counts = index.counts_grid(xs, ys, cfg.patch_size)
    iy, ix = np.unravel_index(int(np.argmin(counts)), counts.shape)
    return CropWindow(int(xs[ix]), int(ys[iy]), cfg.patch_size), int(counts[iy, ix])


def extract_patch(
    raster: RgbaRaster,
    building: BuildingAnnotation,
    cfg: PatchConfig,
    rng: np.random.Generator,
    scene_id: str = "",
    index: Optional[EmptyIndex] = None,
) -> PatchRecord:
    if index is None:
        index = EmptyIndex(raster)
    dims = raster.dims
    c = ring_centroid(building.ring)
    area = cfg.patch_size * cfg.patch_size

    best_window, best_count = None, None
    attempts = 0
    accepted = False
    for window in candidate_windows(c, cfg, dims, rng):
        attempts += 1
        count = index.empty_count(window)
        if best_count is None or count < best_count:
            best_window, best_count = window, count
        if count / area <= cfg.empty_threshold:
            accepted = True
            best_window, best_count = window, count
            break

    if not accepted and cfg.exhaustive_fallback:
        window, count = exhaustive_best(index, c, cfg, dims)
        if count < best_count:
            best_window, best_count = window, count

    patch = crop(raster, best_window)
    ratio = empty_ratio(patch)
    w, h = dims
    padded = (best_window.x1 < 0 or best_window.y1 < 0
              or best_window.x1 + cfg.patch_size > w or best_window.y1 + cfg.patch_size > h)
    return PatchRecord(
        scene_id=scene_id,
        building_id=building.building_id,
        label=building.damage,
        window=best_window,
        empty_ratio=ratio,
        attempts_used=attempts,
        fallback_used=not accepted,
        pixels=np.ascontiguousarray(patch.pixels[..., :3]),
        padded=padded,
    )
