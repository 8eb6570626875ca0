"""Synthetic street scenes with a planted high-contrast texture.

Every scene is a layout of flat-coloured class regions (sky, buildings,
wall, vegetation, sidewalk, road, ...). Positive scenes carry a
black-and-white texture inside the region of one known class; the label
is 1 exactly when the texture is present. This gives a benchmark with a
known answer for the ranking stage: the planted class should come first.

Half of the scenes of either label are multiplied by a random smooth
illumination field that reaches black somewhere. Masked inputs built by
the explainer look like such shadows, so brightness alone must carry no
label information or every masked input would score alike.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import bilinear_resize, minmax_normalize
from .segmentation import CLASS_IDS

SKY = CLASS_IDS["sky"]
BUILDING = CLASS_IDS["building"]
ROAD = CLASS_IDS["road"]
SIDEWALK = CLASS_IDS["sidewalk"]
VEGETATION = CLASS_IDS["vegetation"]
WALL = CLASS_IDS["wall"]
FENCE = CLASS_IDS["fence"]
POLE = CLASS_IDS["pole"]

PLANTABLE = (BUILDING, ROAD, SIDEWALK, VEGETATION, WALL)
MIN_PLANT_FRACTION = 1 / 16
SHADE_PROBABILITY = 0.5

BASE_COLOURS = {
    SKY: (0.62, 0.76, 0.90),
    BUILDING: (0.55, 0.42, 0.35),
    ROAD: (0.38, 0.38, 0.40),
    SIDEWALK: (0.70, 0.68, 0.62),
    VEGETATION: (0.25, 0.50, 0.22),
    WALL: (0.66, 0.60, 0.50),
    FENCE: (0.45, 0.45, 0.30),
    POLE: (0.30, 0.30, 0.30),
}


@dataclass
class SyntheticScene:
    image_id: str
    image: np.ndarray
    segmentation: np.ndarray
    label: int
    planted_class: int | None
    lat: float
    lon: float


def scene_layout(size: int, rng: np.random.Generator) -> np.ndarray:
    """Random street-canyon layout: sky, flanking buildings/wall, road, sidewalk."""
    seg = np.full((size, size), SKY, dtype=np.int64)
    horizon = int(size * rng.uniform(0.42, 0.55))
    sky_line_l = int(size * rng.uniform(0.08, 0.30))
    sky_line_r = int(size * rng.uniform(0.08, 0.30))
    road_left = int(size * rng.uniform(0.25, 0.40))
    road_right = int(size * rng.uniform(0.60, 0.75))
    mid = size // 2

    seg[sky_line_l:horizon, :mid] = BUILDING
    right_class = WALL if rng.random() < 0.5 else BUILDING
    seg[sky_line_r:horizon, mid:] = right_class
    veg_w = int(size * rng.uniform(0.25, 0.40))
    veg_top = horizon - int(size * rng.uniform(0.18, 0.28))
    if rng.random() < 0.5:
        seg[veg_top:horizon, :veg_w] = VEGETATION
    else:
        seg[veg_top:horizon, size - veg_w:] = VEGETATION
    if right_class == BUILDING:
        wall_top = horizon - int(size * rng.uniform(0.15, 0.25))
        seg[wall_top:horizon, mid - size // 6:mid + size // 6] = WALL

    rows = np.arange(size)[:, None]
    cols = np.arange(size)[None, :]
    # road widens toward the camera
    t = np.clip((rows - horizon) / max(size - horizon, 1), 0.0, 1.0)
    left_edge = road_left - t * road_left * 0.9
    right_edge = road_right + t * (size - road_right) * 0.9
    ground = np.broadcast_to(rows >= horizon, seg.shape)
    seg[ground] = SIDEWALK
    road = ground & (cols >= left_edge) & (cols < right_edge)
    seg[road] = ROAD
    if rng.random() < 0.5:
        pole_c = int(size * rng.uniform(0.05, 0.95))
        seg[int(size * 0.2):horizon + size // 10, pole_c:pole_c + max(size // 64, 1)] = POLE
    return seg


def render(seg: np.ndarray, rng: np.random.Generator, noise: float = 0.02) -> np.ndarray:
    img = np.zeros(seg.shape + (3,))
    for cid, colour in BASE_COLOURS.items():
        jitter = rng.uniform(-0.05, 0.05, size=3)
        img[seg == cid] = np.clip(np.asarray(colour) + jitter, 0.0, 1.0)
    img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def plant_texture(img: np.ndarray, region: np.ndarray, period: int = 4) -> np.ndarray:
    """Overlay a pixel-grid-aligned black/white checkerboard on ``region``."""
    h, w = region.shape
    rows = np.arange(h)[:, None] // (period // 2)
    cols = np.arange(w)[None, :] // (period // 2)
    checker = ((rows + cols) % 2).astype(np.float64)
    out = img.copy()
    out[region] = checker[region][:, None] * np.ones(3)
    return out


def shade(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Multiply by a min-max normalized, upsampled coarse random field."""
    cells = int(rng.integers(2, 6))
    field = minmax_normalize(bilinear_resize(rng.random((cells, cells)), *img.shape[:2]))
    return img * field[:, :, None]


def generate_scene(index: int, size: int, positive: bool, seed: int) -> SyntheticScene:
    rng = np.random.default_rng([seed, index])
    seg = scene_layout(size, rng)
    img = render(seg, rng)
    planted = None
    if positive:
        candidates = [c for c in PLANTABLE if np.count_nonzero(seg == c) >= MIN_PLANT_FRACTION * size * size]
        planted = int(rng.choice(candidates))
        img = plant_texture(img, seg == planted)
    if rng.random() < SHADE_PROBABILITY:
        img = shade(img, rng)
    lat = 34.00 + rng.uniform(0.0, 0.04)
    lon = -118.28 + rng.uniform(0.0, 0.04)
    return SyntheticScene(f"synth_{index:04d}", img, seg, int(positive), planted, lat, lon)


def generate_dataset(n: int = 200, size: int = 128, seed: int = 0, positive_fraction: float = 0.5):
    """``n`` scenes; the first ``round(n * positive_fraction)`` indices after shuffling are positive."""
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * positive_fraction))
    flags = np.zeros(n, dtype=bool)
    flags[rng.permutation(n)[:n_pos]] = True
    return [generate_scene(i, size, bool(flags[i]), seed) for i in range(n)]
